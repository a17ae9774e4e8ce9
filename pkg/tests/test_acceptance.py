"""Acceptance checks, one per shipped guarantee.

Each test prints one `[PASS]`/`[FAIL]` summary line (visible with
`pytest tests/test_acceptance.py -s`) and then asserts, so a red run always
says which guarantee broke and by how much. Runtime budgets are asserted
where a guarantee includes one.
"""

import time

import numpy as np
import pytest

from orthorep import metrics as mt
from orthorep import surrogate as sg
from orthorep.dataset import (DatasetManifest, ManifestEntry, SplitSpec,
                              assign_splits, augment_manifest)
from orthorep.mesh import Augmentation, AugKind, apply_augmentation
from orthorep.rasterize import OrthoCamera, ViewRendering, rasterize
from orthorep.represent import (VIEW_DIRS, VIEW_ORDER, VIEW_UPS,
                                IntegratedImage, Tile, ViewMeta, decode_depth,
                                decode_normal, encode_depth, encode_normal,
                                mirror_for_bilateral_flip, quantize,
                                read_integrated_png, reconstruct,
                                render_single_view, render_six_views,
                                render_six_views_pair, write_integrated_png)
from orthorep.shapes import (random_box_like, random_convex_hull,
                             random_triangle_soup, unit_cube)

from oracles import edge_clear_mask, point_mesh_distance, ray_cast_depths


def report(name, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# Rasterizer vs brute-force ray casting

def acceptance_meshes(count):
    rng = np.random.default_rng(0)
    meshes = []
    for i in range(count):
        kind = i % 5
        if kind == 3:
            meshes.append(random_triangle_soup(rng, num_faces=60))
        elif kind == 4:
            meshes.append(random_box_like(rng))
        else:
            meshes.append(random_convex_hull(
                rng, num_points=int(rng.integers(8, 41))))
    return meshes


def test_rasterizer_matches_ray_cast_oracle():
    t0 = time.perf_counter()
    max_err = 0.0
    clear_px = 0
    cov_mismatch = 0
    for mesh in acceptance_meshes(50):
        assert len(mesh.faces) <= 200
        for view in VIEW_ORDER:
            cam = OrthoCamera(VIEW_DIRS[view], VIEW_UPS[view], 12.0, 12.0,
                              64, 64, near_plane_offset=-6.0)
            rendering = rasterize(mesh, cam)
            with np.errstate(invalid="ignore", divide="ignore"):
                depth, cov = ray_cast_depths(mesh, cam)
                clear = edge_clear_mask(mesh, cam, tol=1e-9)
            both = clear & cov & rendering.coverage
            if both.any():
                max_err = max(max_err, float(
                    np.abs(rendering.depth[both] - depth[both]).max()))
            cov_mismatch += int((rendering.coverage != cov)[clear].sum())
            clear_px += int(clear.sum())
    elapsed = time.perf_counter() - t0
    ok = max_err <= 1e-7 and cov_mismatch == 0 and elapsed < 60.0
    report("rasterizer-oracle", ok,
           f"max depth err {max_err:.3g} m over {clear_px} edge-clear px, "
           f"{cov_mismatch} coverage mismatches, {elapsed:.1f}s (< 60s)")


# ---------------------------------------------------------------------------
# Codec round trip at both bit depths

def single_tile_image(enc, bit_depth):
    h, w = enc.coverage.shape
    layout = (Tile("front", 0, 0, w, h),)
    meta = {"front": ViewMeta(enc.d_min, enc.d_max, 1.0, 0.0)}
    return IntegratedImage(enc.pixels, enc.kind, layout, meta,
                           np.zeros(3), enc.coverage, bit_depth)


def test_codec_round_trip_error_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    normals = rng.normal(size=(1000, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    depths = rng.uniform(0.0, 5.0, size=1000)
    worst = {}
    for bit_depth in (8, 16):
        max_code = (1 << bit_depth) - 1
        n_view = ViewRendering(depth=np.zeros((1, 1000)),
                               normal=normals[None, :, :],
                               coverage=np.ones((1, 1000), dtype=bool))
        enc = encode_normal(n_view)
        arr = quantize(single_tile_image(enc, bit_depth))
        decoded = decode_normal(arr.astype(np.float64) / max_code,
                                renormalize=False)
        worst[("normal", bit_depth)] = float(
            np.abs(decoded[0] - normals).max())

        d_view = ViewRendering(depth=depths[None, :],
                               normal=np.zeros((1, 1000, 3)),
                               coverage=np.ones((1, 1000), dtype=bool))
        enc = encode_depth(d_view)
        arr = quantize(single_tile_image(enc, bit_depth))
        gray = arr[..., 0].astype(np.float64) / max_code
        decoded = decode_depth(gray, enc.d_min, enc.d_max)
        worst[("depth", bit_depth)] = float(
            np.abs(decoded[0] - depths).max() / (enc.d_max - enc.d_min))
    elapsed = time.perf_counter() - t0
    ok = elapsed < 5.0
    for (kind, bit_depth), err in worst.items():
        ok = ok and err <= (1.0 + 1e-9) / ((1 << bit_depth) - 1)
    report("codec-round-trip", ok,
           "max err/range " + ", ".join(
               f"{kind}@{bits}b {err:.3g} (<= 1/{(1 << bits) - 1})"
               for (kind, bits), err in worst.items()) +
           f", {elapsed:.1f}s (< 5s)")


# ---------------------------------------------------------------------------
# Reconstruction distance bound

def hausdorff_bound(depth_img):
    steps = (1 << depth_img.bit_depth) - 1
    return max(2.0 / vm.scale + (vm.d_max - vm.d_min) / steps
               for vm in depth_img.view_meta.values())


def test_reconstruction_distance_bound(tmp_path):
    t0 = time.perf_counter()
    meshes = [unit_cube()] + [random_convex_hull(np.random.default_rng(s))
                              for s in (2, 3, 4)]
    details = []
    ok = True
    for i, mesh in enumerate(meshes):
        normal_img, depth_img = render_six_views_pair(mesh, 384, 8, "ortho")
        n_path = tmp_path / f"{i}_n.png"
        d_path = tmp_path / f"{i}_d.png"
        write_integrated_png(normal_img, n_path)
        write_integrated_png(depth_img, d_path)
        cloud = reconstruct(read_integrated_png(n_path),
                            read_integrated_png(d_path))
        dist = float(point_mesh_distance(cloud.positions, mesh).max())
        bound = hausdorff_bound(depth_img)
        ok = ok and dist <= bound * (1.0 + 1e-9)
        details.append(f"{dist:.4f}/{bound:.4f}")
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 30.0
    report("reconstruction-bound", ok,
           f"worst-point distance vs bound (m): {', '.join(details)}, "
           f"{elapsed:.1f}s (< 30s)")


# ---------------------------------------------------------------------------
# Flip equivariance of the integrated representation

def test_flip_equivariance_of_integrated_images():
    flip = Augmentation(AugKind.BILATERAL_FLIP)
    rng = np.random.default_rng(6)
    meshes = [random_box_like(rng) for _ in range(5)]
    meshes += [random_convex_hull(rng) for _ in range(5)]
    max_err = 0.0
    cov_ok = True
    for mesh in meshes:
        flipped = apply_augmentation(mesh, flip)
        for mode in ("normal", "depth"):
            original = render_six_views(mesh, 48, mode, 8, "ortho")
            mirrored = mirror_for_bilateral_flip(original)
            direct = render_six_views(flipped, 48, mode, 8, "ortho")
            max_err = max(max_err, float(
                np.abs(mirrored.pixels - direct.pixels).max()))
            cov_ok = cov_ok and bool(
                (mirrored.coverage == direct.coverage).all())
    ok = cov_ok and max_err <= 1.0 / 255.0
    report("flip-equivariance", ok,
           f"max pixel err {max_err:.3g} (<= 1/255) over 10 meshes x 2 modes, "
           f"coverage {'identical' if cov_ok else 'mismatched'}")


# ---------------------------------------------------------------------------
# Analytic gradients vs central finite differences

def _mse(state, cfg, batch, labels):
    preds = sg.forward(state, cfg, batch)
    return float(np.mean((preds - labels) ** 2))


def test_gradients_match_finite_differences():
    t0 = time.perf_counter()
    h = 1e-4
    worst = 0.0
    worst_at = ""
    for seed in range(5):
        for streams in ("normal_only", "fused"):
            cfg = sg.ModelConfig(input_resolution=8, patch_size=4,
                                 embed_dim=6, attention_dim=8, heads=2,
                                 head_hidden=5, streams=streams,
                                 parameter_init_seed=seed)
            rng = np.random.default_rng(100 + seed)
            imgs = [rng.uniform(size=(8, 8, 3)) for _ in range(6)]
            batch = ([(imgs[i], imgs[i + 3]) for i in range(3)]
                     if streams == "fused" else imgs[:3])
            labels = rng.uniform(0.2, 0.8, size=3)
            state = sg.init_state(cfg)
            _, grads = sg.loss_and_grad(state, cfg, batch, labels)
            for name, _, _ in sg.tensor_specs(cfg):
                analytic = grads[name]
                numeric = np.zeros_like(analytic).reshape(-1)
                flat = state.tensors[name].reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    up = _mse(state, cfg, batch, labels)
                    flat[i] = orig - h
                    dn = _mse(state, cfg, batch, labels)
                    flat[i] = orig
                    numeric[i] = (up - dn) / (2 * h)
                denom = max(float(np.linalg.norm(analytic)), 1e-12)
                rel = float(np.linalg.norm(
                    numeric.reshape(analytic.shape) - analytic)) / denom
                if rel > worst:
                    worst, worst_at = rel, f"{streams}/{name}/seed{seed}"
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 300.0
    report("gradient-check", ok,
           f"worst rel err {worst:.3g} (< 1e-4) at {worst_at}, "
           f"5 seeds x 2 modes, {elapsed:.0f}s (< 300s)")


# ---------------------------------------------------------------------------
# Synthetic-label learning and input ablations

FLEET_SIZE = 500
FLEET_RES = 48
TASK_MODEL = dict(input_resolution=24, patch_size=8, embed_dim=24,
                  attention_dim=32, heads=4, head_hidden=32,
                  parameter_init_seed=0)
# lr 0.05 is the highest setting at which every stream trains stably on
# this task; the fused fine-tune uses 0.01 because it starts from trained
# stream weights and only has to fit the cross blocks and head.
SCRATCH_LR = 0.05
FUSED_LR = 0.01


@pytest.fixture(scope="module")
def synthetic_task():
    """500 box-like meshes, their renderings, and a group-safe split.

    The label is the covered fraction of the front tile, a geometric
    stand-in for a drag-correlated quantity that the six-view image
    determines exactly.
    """
    t0 = time.perf_counter()
    pairs, persp, bottoms, labels = [], [], [], []
    for i in range(FLEET_SIZE):
        mesh = random_box_like(np.random.default_rng(1000 + i))
        normal_img, depth_img = render_six_views_pair(mesh, FLEET_RES, 8,
                                                      "ortho")
        pairs.append((normal_img, depth_img))
        labels.append(float(normal_img.tile_coverage("front").mean()))
        persp.append(render_six_views(mesh, FLEET_RES, "normal", 8,
                                      "perspective"))
        bottoms.append(render_single_view(mesh, "bottom", FLEET_RES,
                                          "normal"))
    entries = tuple(ManifestEntry(id=f"m{i:03d}", group_id=f"m{i:03d}",
                                  mesh_path=f"m{i:03d}.obj",
                                  drag_coefficient=None)
                    for i in range(FLEET_SIZE))
    manifest = assign_splits(DatasetManifest(entries),
                             SplitSpec((0.7, 0.15, 0.15), seed=0))
    split_of = {e.id: e.split for e in manifest}
    idx = {s: [i for i in range(FLEET_SIZE) if split_of[f"m{i:03d}"] == s]
           for s in ("train", "val", "test")}
    return {"pairs": pairs, "persp": persp, "bottoms": bottoms,
            "labels": np.array(labels), "idx": idx,
            "render_seconds": time.perf_counter() - t0}


def _fit_and_score(task, pick, streams, lr, init_state=None):
    cfg = sg.ModelConfig(streams=streams, **TASK_MODEL)
    tcfg = sg.TrainConfig(learning_rate=lr, lr_decay_per_epoch=0.99,
                          batch_size=32, max_epochs=200,
                          early_stop_patience=200, seed=0)
    labels = task["labels"]

    def examples(split):
        return [sg.Example(pick(i), labels[i], f"m{i:03d}")
                for i in task["idx"][split]]

    state = init_state if init_state is not None else sg.init_state(cfg)
    best, log = sg.train(state, cfg, tcfg, examples("train"),
                         examples("val"))
    test_set = examples("test")
    preds, _ = sg.predict(best, cfg, [ex.inputs for ex in test_set])
    r2 = mt.r_squared(preds, np.array([ex.label for ex in test_set]))
    return best, float(r2), len(log)


@pytest.fixture(scope="module")
def model_scores(synthetic_task):
    """Train all five input variants once; criteria read from this dict."""
    task = synthetic_task
    t0 = time.perf_counter()
    scores = {}
    states = {}
    states["normal"], scores["normal"], scores["normal_epochs"] = \
        _fit_and_score(task, lambda i: task["pairs"][i][0], "normal_only",
                       SCRATCH_LR)
    states["depth"], scores["depth"], _ = \
        _fit_and_score(task, lambda i: task["pairs"][i][1], "depth_only",
                       SCRATCH_LR)
    fused_cfg = sg.ModelConfig(streams="fused", **TASK_MODEL)
    seed_state = sg.init_fused_from_streams(states["normal"], states["depth"],
                                            fused_cfg)
    _, scores["fused"], _ = _fit_and_score(task, lambda i: task["pairs"][i],
                                           "fused", FUSED_LR,
                                           init_state=seed_state)
    _, scores["perspective"], _ = \
        _fit_and_score(task, lambda i: task["persp"][i], "normal_only",
                       SCRATCH_LR)
    _, scores["bottom"], _ = \
        _fit_and_score(task, lambda i: task["bottoms"][i], "normal_only",
                       SCRATCH_LR)
    scores["train_seconds"] = time.perf_counter() - t0
    return scores


def test_synthetic_label_learning(synthetic_task, model_scores):
    elapsed = synthetic_task["render_seconds"] + model_scores["train_seconds"]
    best_single = max(model_scores["normal"], model_scores["depth"])
    ok = (model_scores["normal"] >= 0.90
          and model_scores["normal_epochs"] <= 200
          and model_scores["fused"] >= best_single - 0.02
          and elapsed < 900.0)
    report("synthetic-learning", ok,
           f"test R^2 normal {model_scores['normal']:.4f} (>= 0.90 in "
           f"{model_scores['normal_epochs']} epochs), depth "
           f"{model_scores['depth']:.4f}, fused {model_scores['fused']:.4f} "
           f"(>= best single - 0.02 = {best_single - 0.02:.4f}), "
           f"{elapsed:.0f}s (< 900s)")


def test_view_ablation_ordering(model_scores):
    six = model_scores["normal"]
    persp = model_scores["perspective"]
    bottom = model_scores["bottom"]
    ok = six > persp and six > bottom
    report("view-ablation", ok,
           f"test R^2 six-view {six:.4f} > perspective {persp:.4f} "
           f"and > bottom-only {bottom:.4f}")


# ---------------------------------------------------------------------------
# Dataset pipeline guarantees

def _toy_manifest(n):
    return DatasetManifest(tuple(
        ManifestEntry(id=f"car{i}", group_id=f"car{i}",
                      mesh_path=f"car{i}.obj",
                      drag_coefficient=0.2 + 0.001 * i)
        for i in range(n)))


def test_pipeline_cardinality_and_split_safety():
    sizes_ok = all(
        len(augment_manifest(_toy_manifest(n), resize_seed=0)) == 4 * n
        for n in (1, 7, 25))
    augmented = augment_manifest(_toy_manifest(37), resize_seed=0)
    groups = {e.group_id for e in augmented}
    leaks = 0
    unassigned = 0
    for seed in range(100):
        split = assign_splits(augmented, SplitSpec((0.7, 0.15, 0.15),
                                                   seed=seed))
        per = {s: {e.group_id for e in split.by_split(s)}
               for s in ("train", "val", "test")}
        leaks += len(per["train"] & per["val"]) + \
            len(per["train"] & per["test"]) + len(per["val"] & per["test"])
        unassigned += len(groups - per["train"] - per["val"] - per["test"])
    ok = sizes_ok and leaks == 0 and unassigned == 0
    report("pipeline-cardinality", ok,
           f"augment 4N exact for N in (1, 7, 25): {sizes_ok}; "
           f"{leaks} group leaks, {unassigned} unassigned groups "
           f"across 100 split seeds")


# ---------------------------------------------------------------------------
# Full-scale benchmark pointer

def test_full_scale_benchmark_pointer():
    print("[INFO] full-scale benchmark: CFD-labeled car training needs the "
          "external dataset and is not run here; the README's full-scale "
          "harness section reports metrics next to the reference values in "
          "orthorep.metrics (no pass/fail threshold).")
    assert len(mt.REFERENCE_BIN_MAE) == len(mt.DRAG_BINS)
    assert mt.REFERENCE_DRAG_RANGE[0] < mt.REFERENCE_DRAG_RANGE[1]
