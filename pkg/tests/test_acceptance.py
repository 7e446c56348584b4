"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line PASS/FAIL summary that is printed at the end of
the pytest run. Run directly with ``python tests/test_acceptance.py``.
"""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from autorig.animation import Pose, RiggedAsset, lbs_deform, random_poses
from autorig.cli import main
from autorig.geodesic import geodesic_field, geodesic_prior, voxelize, volumetric_geodesic
from autorig.geometry import Mesh, PointCloud, Skeleton, sample_surface
from autorig.metrics import (bone_samples, cd_b2b, cd_j2b, cd_j2j, deformation_error, skin_avg_l1,
                             skin_precision_recall)
from autorig.seqmodel import (Sample, SeqModelConfig, SkeletonModel, TrainingConfig, group_points,
                              sample_skeleton, sequence_loss, teacher_forced_accuracy, train)
from autorig.sequencer import VOCAB_SIZE, detokenize, prefix_closed, sequence_valid, tokenize
from autorig.skindiff import (Denoiser, DenoiserConfig, NoiseSchedule, SkinExample, SkinTrainingConfig,
                              forward_noise, sample_skin, skin_loss, train_skin)
from autorig.synthgen import TEMPLATES, SynthSpec, default_specs, generate, synth_skeleton
from oracles import (bellman_ford_grid, blob_mesh, box_mesh, ellipsoid_mesh, finite_difference_check,
                     isomorphic_by_position, permute_storage, random_tree)

SCHED = NoiseSchedule()


def _skeleton_pool(count: int, seed: int) -> list[Skeleton]:
    """Half template skeletons, half random trees, with 2 to 30 joints."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        if i % 2:
            out.append(random_tree(rng, int(rng.integers(2, 31))))
        else:
            out.append(synth_skeleton(SynthSpec(TEMPLATES[(i // 2) % 4], (3, 30), seed=seed + i)))
    return out


def test_criterion_01_tokenization_round_trip(record):
    skeletons = _skeleton_pool(500, 10)
    start = time.perf_counter()
    good = 0
    for s in skeletons:
        ok = True
        for mode in ("spatial", "hierarchical"):
            back = detokenize(tokenize(s, mode), mode).skeleton
            ok &= isomorphic_by_position(s, back, 1.0 / 256)
        good += ok
    elapsed = time.perf_counter() - start
    passed = good == len(skeletons) and elapsed < 10
    record(1, passed, f"{good}/{len(skeletons)} isomorphic in both orderings, {elapsed:.2f}s")
    assert passed


def test_criterion_02_ordering_canonicality(record):
    rng = np.random.default_rng(20)
    skeletons = _skeleton_pool(200, 2000)
    stable = closed = 0
    for s in skeletons:
        want = {m: tokenize(s, m) for m in ("spatial", "hierarchical")}
        same = True
        for _ in range(20):
            p = permute_storage(s, rng)
            for m in want:
                same &= tokenize(p, m) == want[m]
        stable += same
        closed += prefix_closed(want["hierarchical"])
    passed = stable == closed == len(skeletons)
    record(2, passed, f"{stable}/200 stable under 20 permutations, {closed}/200 prefix-closed")
    assert passed


def test_criterion_03_gradient_checks(record, rng):
    start = time.perf_counter()
    cfg = SeqModelConfig(n_layers=2, n_heads=2, width=16, n_points=64, n_groups=8, group_size=4, max_bones=6)
    model = SkeletonModel(cfg, dtype=torch.float64)
    gen = torch.Generator().manual_seed(1)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    samples = []
    for _ in range(2):
        cloud = PointCloud(rng.uniform(-0.5, 0.5, (64, 3)), rng.normal(size=(64, 3)))
        s = random_tree(rng, 4)
        samples.append(Sample(group_points(cloud, cfg), tokenize(s), s))
    seq_err = max(finite_difference_check(
        lambda: sequence_loss(model, [s.shape for s in samples], [s.sequence for s in samples]),
        list(model.parameters()), 100, 1e-6, 0))

    dcfg = DenoiserConfig(width=16, heads=2, stages=2, chunk=8, max_joints=6, fourier_bands=2, shape_width=16)
    den = Denoiser(dcfg, dtype=torch.float64)
    sk = random_tree(rng, 4)
    ex = SkinExample.build(rng.uniform(-0.5, 0.5, (20, 3)), sk.joints, rng.dirichlet(np.ones(4), 20),
                           rng.dirichlet(np.ones(4), 20), torch.randn(3, 16, dtype=torch.float64), n=6)
    skin_err = max(finite_difference_check(lambda: skin_loss(den, [ex], SCHED, torch.Generator().manual_seed(5)),
                                           list(den.parameters()), 100, 1e-6, 0))
    elapsed = time.perf_counter() - start
    passed = seq_err < 1e-4 and skin_err < 1e-4 and elapsed < 120
    record(3, passed, f"max rel err seq {seq_err:.1e}, denoiser {skin_err:.1e} on 100 params each, {elapsed:.1f}s")
    assert passed


@pytest.mark.slow
def test_criterion_04_skeleton_trainability(record):
    start = time.perf_counter()
    cfg = SeqModelConfig(n_layers=2, n_heads=4, width=128, n_points=1024, n_groups=32, group_size=16,
                         max_bones=20)
    assets = [generate(s) for s in default_specs(20, seed=400)]
    samples = [Sample(group_points(sample_surface(a.mesh, cfg.n_points, i), cfg), tokenize(a.skeleton), a.skeleton)
               for i, a in enumerate(assets)]
    model = SkeletonModel(cfg, seed=0)
    with torch.no_grad():
        initial = sequence_loss(model, [s.shape for s in samples], [s.sequence for s in samples]).item()
    log = train(model, samples, TrainingConfig(learning_rate=1e-3, batch_size=8, steps=2000, seed=0),
                eval_every=50, target_accuracy=0.95)
    acc = teacher_forced_accuracy(model, samples)
    with torch.no_grad():
        tokens = model.encode([s.shape for s in samples])
    valid = sum(sequence_valid(sample_skeleton(tokens[i], model, 0.0, seed=i).sequence.tokens)
                for i in range(len(samples)))
    elapsed = time.perf_counter() - start
    steps = len(log.losses)
    passed = (abs(initial - math.log(VOCAB_SIZE)) <= 0.2 and acc >= 0.95 and steps <= 2000
              and valid >= 0.9 * len(samples) and elapsed < 900)
    record(4, passed, f"initial loss {initial:.3f} (ln 131 = {math.log(VOCAB_SIZE):.3f}), accuracy {acc:.3f} "
                      f"after {steps} steps, {valid}/{len(samples)} greedy samples valid, {elapsed:.0f}s")
    assert passed


def test_criterion_05_geodesic_correctness(record):
    rng = np.random.default_rng(50)
    exact = 0
    for _ in range(50):
        mesh = blob_mesh(rng)
        grid = voxelize(mesh, int(rng.integers(8, 17)))
        sk = Skeleton(rng.uniform(-0.15, 0.15, (2, 3)), [[0, 1]])
        field = geodesic_field(grid, mesh, sk)
        occ = grid.passable.astype(np.uint8)
        ok = True
        for j in range(sk.num_joints):
            got = field.cell_distance[j]
            src = int(np.argmin(got))
            want = bellman_ford_grid(occ, src, float(got[src]), grid.voxel_size)
            fin = np.isfinite(want)
            ok &= np.array_equal(np.isinf(got), ~fin) and np.allclose(got[fin], want[fin], rtol=0, atol=1e-12)
        exact += ok

    convex_ok = 0
    worst = 0.0
    for i in range(20):
        if i % 2:
            radii = rng.uniform(0.15, 0.4, 3)
            mesh = ellipsoid_mesh(radii)
            joints = rng.uniform(-1, 1, (3, 3)) * radii * 0.5
        else:
            half = rng.uniform(0.15, 0.4, 3)
            mesh = box_mesh(-half, half)
            joints = rng.uniform(-1, 1, (3, 3)) * half * 0.8
        grid = voxelize(mesh, 64)
        sk = Skeleton(joints, [[0, 1], [1, 2]])
        d = volumetric_geodesic(grid, mesh, sk)
        e = np.linalg.norm(mesh.vertices[:, None] - joints[None], axis=-1)
        gap = float(np.abs(d - e).max())
        worst = max(worst, gap / grid.diagonal)
        convex_ok += gap <= grid.diagonal
    passed = exact == 50 and convex_ok == 20
    record(5, passed, f"{exact}/50 grids match the Bellman-Ford oracle, {convex_ok}/20 convex solids within "
                      f"one voxel diagonal (worst {worst:.2f} diagonals)")
    assert passed


def test_criterion_06_diffusion_identities(record):
    rng = np.random.default_rng(60)
    ident = float(np.abs(SCHED.alpha[1:] ** 2 + SCHED.sigma[1:] ** 2 - 1).max())
    f0 = rng.normal(size=(50, 7))
    clean = np.array_equal(forward_noise(f0, 0, rng.normal(size=f0.shape), SCHED), f0)
    worst = 0.0
    for t in (1, 10, 100, 250, 500, 750, 1000):
        x = rng.normal(size=100000)
        ft = forward_noise(x, t, rng.normal(size=100000), SCHED)
        want = SCHED.alpha[t] ** 2 * x.var() + SCHED.sigma[t] ** 2
        worst = max(worst, abs(ft.var() / want - 1))
    passed = ident <= 1e-12 and clean and worst < 0.05
    record(6, passed, f"max |a^2+s^2-1| {ident:.1e}, t=0 exact {clean}, worst variance deviation {worst:.2%}")
    assert passed


@pytest.mark.slow
def test_criterion_07_skinning_overfit(record):
    start = time.perf_counter()
    assets = [generate(s) for s in default_specs(5, joint_range=(3, 8))]
    examples = [SkinExample.build(a.mesh.vertices, a.skeleton.joints,
                                  geodesic_prior(a.mesh, a.skeleton, 64, 2.0).matrix, a.skin)
                for a in assets]
    model = Denoiser(DenoiserConfig(), seed=0)
    train_skin(model, examples, SCHED, SkinTrainingConfig(learning_rate=1e-3, steps=3000, batch_size=2,
                                                          max_points=512, seed=0))
    l1s, dists, simplex = [], [], 0.0
    for i, (a, ex) in enumerate(zip(assets, examples)):
        w = sample_skin(model, ex, SCHED, 25, seed=i)
        simplex = max(simplex, float(np.abs(w.sum(1) - 1).max()), float(-w.min()))
        l1s.append(skin_avg_l1(w, a.skin))
        dists.append(deformation_error(a.with_skin(w), a, random_poses(a.skeleton, 10, 30.0, seed=i)))
    elapsed = time.perf_counter() - start
    l1, dist = float(np.mean(l1s)), float(np.mean(dists))
    passed = l1 <= 0.1 and dist <= 0.01 and simplex <= 1e-6 and elapsed < 1800
    record(7, passed, f"avg L1 {l1:.4f} (max {max(l1s):.4f}), deformation error {dist:.4f} "
                      f"(max {max(dists):.4f}), simplex error {simplex:.1e}, {elapsed:.0f}s")
    assert passed


def test_criterion_08_metric_oracles(record, rng):
    checks = {}
    s = random_tree(rng, 6)
    checks["identical"] = cd_j2j(s, s) == cd_j2b(s, s) == cd_b2b(s, s) == 0.0
    checks["j2j single"] = math.isclose(cd_j2j([[0, 0, 0]], [[0.3, 0.4, 1.2]]), 1.3, abs_tol=1e-12)
    checks["j2j hand"] = math.isclose(cd_j2j([[0, 0, 0], [1, 0, 0]], [[0, 0, 0]]), 0.25, abs_tol=1e-12)

    long_bone = Skeleton(np.array([[-1.0, 0, 0], [1.0, 0, 0]]), [[0, 1]])
    samples = bone_samples(long_bone, 32)

    def term(p):
        return float(np.linalg.norm(samples - np.asarray(p, dtype=float), axis=1).min())

    checks["j2b endpoint on bone"] = term([1.0, 0, 0]) == 0.0
    checks["j2b interior on bone"] = term([0.013, 0, 0]) <= 2.0 / (2 * 32)
    for h in (0.05, 0.3, 1.0):
        checks[f"j2b perpendicular {h}"] = abs(term([0.013, h, 0]) - h) <= 2.0 / (2 * 32)
    checks["j2b identical"] = cd_j2b(long_bone, long_bone) == 0.0

    a = Skeleton(np.array([[0.0, 0, 0], [1, 0, 0]]), [[0, 1]])
    for dd in (0.1, 0.5, 2.0):
        b = Skeleton(np.array([[0.0, dd, 0], [1, dd, 0]]), [[0, 1]])
        checks[f"b2b parallel {dd}"] = math.isclose(cd_b2b(a, b), dd, rel_tol=1e-12)
        checks[f"b2b symmetric {dd}"] = cd_b2b(a, b) == cd_b2b(b, a)

    truth = np.array([[0.7, 0.3, 0.0]])
    checks["pr equal"] = tuple(skin_precision_recall(truth, truth)) == (1.0, 1.0)
    pr = skin_precision_recall(np.array([[0.5, 0.25, 0.25]]), truth)
    checks["pr extras"] = pr.recall == 1.0 and pr.precision < 1.0
    pr = skin_precision_recall(np.array([[1.0, 0.0, 0.0]]), truth)
    checks["pr hand"] = pr.precision == 1.0 and pr.recall == 0.5
    checks["l1 zero"] = skin_avg_l1(truth, truth) == 0.0
    checks["l1 swap"] = skin_avg_l1([[1, 0], [1, 0]], [[0, 1], [0, 1]]) == 2.0
    checks["l1 half"] = skin_avg_l1([[0.5, 0.5]], [[1, 0]]) == 1.0

    bar = Skeleton(np.array([[0.0, 0, 0], [1.0, 0, 0]]), [[0, 1]], 0, {1: 0})
    mesh = Mesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]]), np.array([[0, 1, 2]]))
    truth_asset = RiggedAsset(mesh, bar, [[1.0, 0], [0.5, 0.5], [0, 1.0]])
    pred_asset = truth_asset.with_skin([[1.0, 0], [1.0, 0.0], [0, 1.0]])
    move = Pose.translate(2, {1: np.array([1.0, 0, 0])})
    per_vertex = np.linalg.norm(lbs_deform(pred_asset, move).vertices - lbs_deform(truth_asset, move).vertices, axis=1)
    checks["deform hand"] = np.allclose(per_vertex, [0, 0.5, 0], atol=1e-12)
    checks["deform mean"] = math.isclose(deformation_error(pred_asset, truth_asset, [move, move]), 0.5 / 3)
    checks["deform identity"] = deformation_error(pred_asset, truth_asset, [Pose.identity(2)]) == 0.0
    checks["deform same"] = deformation_error(truth_asset, truth_asset, [move]) == 0.0

    worst = 0.0
    for _ in range(100):
        p, q = random_tree(rng, int(rng.integers(2, 10))), random_tree(rng, int(rng.integers(2, 10)))
        shift = rng.normal(size=3)
        tp, tq = p.with_joints(p.joints + shift), q.with_joints(q.joints + shift)
        for f in (cd_j2j, cd_j2b, cd_b2b):
            worst = max(worst, abs(f(p, q) - f(q, p)), abs(f(tp, tq) - f(p, q)))
    checks["symmetry and translation"] = worst <= 1e-9

    failed = [k for k, v in checks.items() if not v]
    passed = not failed
    record(8, passed, f"{len(checks) - len(failed)}/{len(checks)} examples, worst symmetry/translation gap "
                      f"{worst:.1e}" + (f", failed: {failed}" if failed else ""))
    assert passed


def test_criterion_09_lbs_invariants(record):
    rng = np.random.default_rng(90)
    assets = [generate(s) for s in default_specs(50, seed=900, joint_range=(3, 8))]
    ident = rigid = 0.0
    for a in assets:
        w = rng.dirichlet(np.ones(a.skeleton.num_joints), len(a.mesh.vertices))
        for asset in (a, a.with_skin(w)):
            out = lbs_deform(asset, Pose.identity(asset.skeleton.num_joints))
            ident = max(ident, float(np.abs(out.vertices - asset.mesh.vertices).max()))
            r = Rotation.random(random_state=int(rng.integers(1 << 30))).as_matrix()
            t = rng.normal(size=3)
            moved = lbs_deform(asset, Pose.rigid(asset.skeleton.num_joints, r, t))
            rigid = max(rigid, float(np.abs(moved.vertices - (asset.mesh.vertices @ r.T + t)).max()))
    passed = ident <= 1e-12 and rigid <= 1e-9
    record(9, passed, f"identity max error {ident:.1e}, rigid motion max error {rigid:.1e} on 50 assets")
    assert passed


@pytest.mark.slow
def test_criterion_10_pipeline_determinism(record, tmp_path):
    small = {"point_count": 256, "shape_groups": 16, "group_size": 8, "max_bones": 12, "seq_width": 32,
             "skin_width": 32, "seq_steps": 40, "skin_steps": 20, "voxel_resolution": 24, "skin_chunk": 128}
    cfg = tmp_path / "small.json"
    cfg.write_text(json.dumps(small))
    corpus, ck = tmp_path / "corpus", tmp_path / "ck.npz"
    assert main(["synth-gen", "--count", "3", "--joints", "3", "5", "--config", str(cfg), "--out", str(corpus)]) == 0
    assert main(["train-skeleton", str(corpus), "--config", str(cfg), "--out", str(ck)]) == 0
    assert main(["train-skin", str(corpus), "--config", str(cfg), "--out", str(ck)]) == 0
    outs, codes = [], []
    for i in range(2):
        out = tmp_path / f"rig{i}.json"
        r = subprocess.run([sys.executable, "-m", "autorig.cli", "pipeline", str(corpus / "asset_0001.obj"),
                            "--checkpoint", str(ck), "--config", str(cfg), "--seed", "7", "--out", str(out)],
                           capture_output=True, text=True)
        codes.append(r.returncode)
        outs.append(out.read_bytes() if out.exists() else b"")
    passed = codes == [0, 0] and outs[0] == outs[1] and len(outs[0]) > 0
    record(10, passed, f"exit codes {codes}, identical bytes {outs[0] == outs[1]} ({len(outs[0])} bytes)")
    assert passed


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
