"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import io
import itertools
import time
from dataclasses import replace

import numpy as np

from oracles import ap_reference, gradcheck, nms_reference, slc_oracle
from slcmask.autodiff import (
    ConvBlockSpec,
    Tensor,
    add,
    add_all,
    bce_with_logits,
    concat,
    conv2d,
    conv_transpose2x2,
    linear,
    relu,
    reshape,
    roi_align,
    scale,
    sigmoid,
    smooth_l1_loss,
    subsample,
    take_rows,
    tensor_mean,
    tensor_sum,
    transpose,
    upsample_nearest,
)
from slcmask.config import resolve
from slcmask.data import make_corpus
from slcmask.geometry import (
    Annotation,
    decode_array,
    encode_array,
    instances_to_annotations,
    iou_matrix,
    nms_indices,
    read_annotations,
    tile_image,
    write_annotations,
)
from slcmask.metrics import Match, average_precision, evaluate
from slcmask.pipeline import MaskRCNN, infer, train
from slcmask.slc import (
    SlcConfig,
    SlcModule,
    closed_form_receptive_fields,
    measured_layer_receptive_fields,
    slc_forward,
    slc_layer_receptive_fields,
)
from toy import tiny_config
from verdicts import LINES


def report(number, ok, detail, elapsed=None, limit=None):
    """Print the verdict line, then fail the test if the criterion did not hold."""
    timing = ""
    if elapsed is not None:
        timing = f" [{elapsed:.1f}s" + (f" / limit {limit:.0f}s]" if limit else "]")
        if limit is not None and elapsed >= limit:
            ok = False
            detail += "; over time limit"
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}{timing}"
    print("\n" + line)
    LINES.append(line)
    assert ok, line


# ------------------------------------------------------------------ 1
def test_criterion_1_receptive_field_identity():
    t0 = time.perf_counter()
    folds = [
        slc_layer_receptive_fields(r1, r2) == closed_form_receptive_fields(r1, r2) == (3, 5 + 2 * (r1 - 1), 3 + 2 * (r1 + r2))
        for r1, r2 in itertools.product(range(1, 7), repeat=2)
    ]
    measured = [
        measured_layer_receptive_fields(r1, r2) == slc_layer_receptive_fields(r1, r2)
        for r1, r2 in itertools.product(range(1, 4), repeat=2)
    ]
    detail = f"fold == closed form on {sum(folds)}/36 rate pairs, measured == analytic on {sum(measured)}/9"
    report(1, all(folds) and all(measured), detail, time.perf_counter() - t0, 10)


# ------------------------------------------------------------------ 2
def test_criterion_2_slc_forward_matches_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        r1, r2 = (int(v) for v in rng.integers(1, 5, 2))
        fused = [(1,), (1, 2), (1, 3), (1, 2, 3)][rng.integers(4)]
        c, cin = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = (int(v) for v in rng.integers(1, 10, 2))
        mod = SlcModule(SlcConfig(r1, r2, c, fused), in_channels=cin)
        for _, p in mod.named_parameters():
            p.data[...] = rng.normal(0.0, 0.5, p.shape)
        x = rng.normal(size=(int(rng.integers(1, 3)), cin, h, w))
        arrays = [(l.reduce.weight.data, l.reduce.bias.data, l.context.weight.data, l.context.bias.data) for l in mod.layers]
        ref = slc_oracle(x, arrays, (1, r1, r2), fused)
        worst = max(worst, float(np.abs(slc_forward(Tensor(x), mod).data - ref).max()))

    # each block doubles its input: chained 2x + 4x + 8x, parallel branches 6x
    mod = SlcModule(SlcConfig(2, 3, 1))
    for layer in mod.layers:
        layer.reduce.weight.data[...] = 1.0
        layer.reduce.bias.data[...] = 0.0
        layer.context.weight.data[...] = 0.0
        layer.context.weight.data[0, 0, 1, 1] = 2.0
        layer.context.bias.data[...] = 0.0
    x = np.full((1, 1, 6, 6), 0.5)
    chained = np.allclose(slc_forward(Tensor(x), mod).data, 14 * x)
    parallel = np.allclose(sum(layer(Tensor(x)).data for layer in mod.layers), 6 * x)
    ok = worst <= 1e-10 and chained and parallel
    detail = f"max abs error {worst:.2e} over 50 configurations (tol 1e-10); chaining fixture {'holds' if chained and parallel else 'broken'}"
    report(2, ok, detail, time.perf_counter() - t0, 30)


# ------------------------------------------------------------------ 3
def _conv(k, r, stride, pad):
    return lambda t: conv2d(t[0], ConvBlockSpec(t[0].shape[1], t[1].shape[0], k, r, pad, stride, t[1], t[2]))


OP_CASES = [
    ("conv2d 3x3", _conv(3, 1, 1, 1), [(2, 2, 9, 9), (3, 2, 3, 3), (3,)]),
    ("conv2d dilated", _conv(3, 2, 1, 2), [(2, 2, 9, 9), (3, 2, 3, 3), (3,)]),
    ("conv2d strided", _conv(3, 1, 2, 1), [(1, 2, 9, 9), (2, 2, 3, 3), (2,)]),
    ("conv2d 1x1", _conv(1, 1, 1, 0), [(2, 3, 5, 5), (2, 3, 1, 1), (2,)]),
    ("add", lambda t: add(t[0], t[1]), [(2, 3, 4), (2, 3, 4)]),
    ("add_all", lambda t: add_all(t), [(3, 4), (3, 4), (3, 4)]),
    ("scale", lambda t: scale(t[0], -2.5), [(3, 4)]),
    ("relu", lambda t: relu(t[0]), [(2, 4, 5)]),
    ("sigmoid", lambda t: sigmoid(t[0]), [(2, 4, 5)]),
    ("sum", lambda t: tensor_sum(t[0]), [(3, 3)]),
    ("mean", lambda t: tensor_mean(t[0]), [(3, 3)]),
    ("reshape", lambda t: reshape(t[0], (6, 2)), [(3, 4)]),
    ("transpose", lambda t: transpose(t[0], (2, 0, 1)), [(2, 3, 4)]),
    ("take_rows", lambda t: take_rows(t[0], np.array([2, 0, 2, 1])), [(3, 4)]),
    ("concat", lambda t: concat(t, axis=1), [(2, 3), (2, 2)]),
    ("upsample", lambda t: upsample_nearest(t[0], 2), [(1, 2, 3, 3)]),
    ("subsample", lambda t: subsample(t[0], 2), [(1, 2, 5, 6)]),
    ("linear", lambda t: linear(t[0], t[1], t[2]), [(4, 5), (5, 3), (3,)]),
    ("deconv", lambda t: conv_transpose2x2(t[0], t[1], t[2]), [(2, 3, 3, 4), (3, 2, 2, 2), (2,)]),
    ("bce_with_logits", lambda t: bce_with_logits(t[0], np.eye(4)[:3]), [(3, 4)]),
    ("smooth_l1", lambda t: smooth_l1_loss(t[0], np.linspace(-3, 3, 12).reshape(3, 4)), [(3, 4)]),
    (
        "roi_align",
        lambda t: roi_align(t[0], np.array([[0.5, 1.2, 5.3, 4.9], [2.2, 2.2, 4.4, 5.5]]), np.array([1, 0]), output_size=3),
        [(2, 2, 6, 7)],
    ),
]


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _mask_head_specs(model):
    specs = list(model.mask_convs)
    for layer in model.mask_slc.layers:
        specs += [layer.reduce, layer.context]
    return specs + [model.mask_out]


def mask_head_gradcheck(seed=0):
    """Finite-difference check of the whole SLC mask head, input included."""
    model = MaskRCNN(tiny_config(slc=SlcConfig(channels=4)), seed=seed)
    specs = _mask_head_specs(model)
    rng = np.random.default_rng(seed)
    # random biases keep pre-activations off the ReLU kink, where central differences are invalid
    params = [a for s in specs for a in (s.weight.data.copy(), rng.normal(0.0, 0.1, s.bias.shape))]
    params += [model.deconv_w.data.copy(), rng.normal(0.0, 0.1, model.deconv_b.shape)]
    x = rng.normal(size=(2, model.config.fpn_channels, 4, 4))

    def fn(ts):
        it = iter(ts[1:])
        for s in specs:
            s.weight, s.bias = next(it), next(it)
        model.deconv_w, model.deconv_b = next(it), next(it)
        return model.mask_head_forward(ts[0])

    return gradcheck(fn, [x] + params)


def test_criterion_3_gradient_suite():
    t0 = time.perf_counter()
    errors = {}
    for i, (name, fn, shapes) in enumerate(OP_CASES):
        rng = np.random.default_rng(i)
        errors[name] = gradcheck(fn, [_away_from_zero(rng, s) for s in shapes])
    errors["SLC mask head"] = mask_head_gradcheck()
    worst = max(errors, key=errors.get)
    ok = all(e <= 1e-4 for e in errors.values())
    detail = f"{len(errors)} checks, worst {worst} at {errors[worst]:.2e} relative (tol 1e-4)"
    report(3, ok, detail, time.perf_counter() - t0, 120)


# ------------------------------------------------------------------ 4
def test_criterion_4_geometry_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    nms_ok = 0
    for case in range(1000):
        n = int(rng.integers(0, 301))
        xy = rng.uniform(0, 200, (n, 2))
        boxes = np.concatenate([xy, xy + rng.uniform(1, 60, (n, 2))], axis=1)
        scores = rng.integers(0, 6, n).astype(float) if case % 4 == 0 else rng.uniform(size=n)
        thr = float(rng.choice([0.0, 0.1, 0.3, 0.5, 0.7, 1.0]))
        nms_ok += nms_indices(boxes, scores, thr).tolist() == nms_reference(boxes.tolist(), scores.tolist(), thr)

    ap_ok = 0
    for case in range(500):
        n = int(rng.integers(0, 40))
        flags = rng.random(n) < 0.5
        scores = rng.choice(np.linspace(0.05, 1.0, 6), n) if case % 3 == 0 else rng.uniform(size=n)
        num_gt = max(int(flags.sum() + rng.integers(0, 4)), 1)
        got = average_precision([Match(float(s), bool(f)) for f, s in zip(flags, scores)], num_gt)
        ap_ok += abs(got - ap_reference(flags.tolist(), scores.tolist(), num_gt)) <= 1e-9

    # size ratios stay below the decoder's 62.5x scale clamp
    xy = rng.uniform(0, 1000, (5000, 2))
    anchors = np.concatenate([xy, xy + rng.uniform(16, 300, (5000, 2))], axis=1)
    gxy = xy + rng.uniform(-50, 50, (5000, 2))
    gt = np.concatenate([gxy, gxy + rng.uniform(4, 300, (5000, 2))], axis=1)
    delta_err = float(np.abs(decode_array(anchors, encode_array(anchors, gt)) - gt).max())

    ok = nms_ok == 1000 and ap_ok == 500 and delta_err <= 1e-9
    detail = f"NMS {nms_ok}/1000, AP {ap_ok}/500, delta round trip {delta_err:.1e} (tol 1e-9)"
    report(4, ok, detail, time.perf_counter() - t0, 60)


# ------------------------------------------------------------------ 5
def test_criterion_5_protocol_constants():
    cfg = resolve()
    pipe, anchors, tiles = cfg.pipeline(), cfg.anchors(), cfg.tiles()
    sides = sorted({round(s * m, 3) for s in anchors.base_scales for m in anchors.scale_multipliers})
    checks = {
        "tile dedup IoU 0.1": tiles.dedup_iou == 0.1,
        "anchor bases 32..512": anchors.base_scales == (32, 64, 128, 256, 512),
        "extra 0.707 scale": anchors.scale_multipliers == (1.0, 0.707),
        "anchor sides 22.6..512": sides[0] == round(32 * 0.707, 3) and sides[-1] == 512,
        "ratios 0.5,1,1.5": anchors.aspect_ratios == (0.5, 1.0, 1.5),
        "RoIs 2000/1000": (pipe.train_rois, pipe.infer_rois) == (2000, 1000),
        "200 RoIs at 1:2": (pipe.rois_per_image, pipe.positive_ratio) == (200, (1, 2)),
        "100 instances": pipe.max_instances == 100,
        "lr 5e-4": pipe.lr == 5e-4,
        "momentum 0.9": pipe.momentum == 0.9,
        "weight decay 1e-4": pipe.weight_decay == 1e-4,
        "25 epochs": pipe.epochs == 25,
    }
    failed = [k for k, v in checks.items() if not v]
    report(5, not failed, f"{len(checks) - len(failed)}/{len(checks)} constants" + (f"; wrong: {failed}" if failed else ""))


# ------------------------------------------------------------------ 6
DESK_SEEDS = (0, 1, 2)


def desk_arm(train_set, test_set, cfg, seed, enabled):
    pipe = cfg.pipeline()
    pipe = replace(pipe, slc=replace(pipe.slc, enabled=enabled))
    result = train(train_set, pipe, seed=seed)
    dets = [infer(result.model, s.image) for s in test_set]
    rep = evaluate(dets, [s.annotations for s in test_set])
    return result.epoch_losses, rep


def test_criterion_6_desk_slc_experiment():
    t0 = time.perf_counter()
    lines, wins = [], 0
    for seed in DESK_SEEDS:
        cfg = resolve(preset="desk", overrides={"seed": str(seed)})
        spec = cfg.scene()
        assert spec.dock_probability >= 0.7
        samples = make_corpus(spec, cfg["synth.count"], seed, cfg["synth.train_fraction"])
        train_set = [s for s in samples if s.split == "train"]
        test_set = [s for s in samples if s.split == "test"]
        assert len(train_set) >= 200 and len(test_set) >= 50
        off_losses, off = desk_arm(train_set, test_set, cfg, seed, False)
        on_losses, on = desk_arm(train_set, test_set, cfg, seed, True)
        converged = off_losses[-1] < 0.5 * off_losses[0] and on_losses[-1] < 0.5 * on_losses[0]
        mask_gain = on.ap_mask - off.ap_mask
        box_gap = abs(on.ap_box - off.ap_box)
        seed_ok = converged and mask_gain >= 0 and box_gap < 3
        wins += seed_ok
        lines.append(
            f"seed {seed}: loss {off_losses[0]:.2f}->{off_losses[-1]:.2f} / {on_losses[0]:.2f}->{on_losses[-1]:.2f}, "
            f"mask AP {off.ap_mask:.2f} -> {on.ap_mask:.2f} ({mask_gain:+.2f}), box AP gap {box_gap:.2f} "
            f"{'ok' if seed_ok else 'miss'}"
        )
        print("\n  " + lines[-1])
    elapsed = time.perf_counter() - t0
    report(6, wins * 2 > len(DESK_SEEDS), f"{wins}/{len(DESK_SEEDS)} seeds hold; " + "; ".join(lines), elapsed)


# ------------------------------------------------------------------ 7
def test_criterion_7_overfit_one_image():
    t0 = time.perf_counter()
    cfg = resolve(preset="desk")
    sample = make_corpus(cfg.scene(), 1, 0, 1.0)
    runs = [train(sample, cfg.pipeline(), seed=3, epochs=30).epoch_losses for _ in range(2)]
    losses = runs[0]
    below = next((i for i, v in enumerate(losses) if v < 0.5 * losses[0]), None)
    decreasing = all(b < a for a, b in zip(losses[:5], losses[1:5]))
    deterministic = runs[0] == runs[1]
    ok = below is not None and decreasing and deterministic
    detail = (
        f"loss {losses[0]:.3f} -> {losses[-1]:.3f}, below half at epoch {below}, "
        f"first 5 epochs {'strictly decreasing' if decreasing else 'not decreasing'}, "
        f"{'bit-identical replay' if deterministic else 'replay differs'}"
    )
    report(7, ok, detail, time.perf_counter() - t0, 120)


# ------------------------------------------------------------------ 8
def test_criterion_8_harbour_tiling():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    extent = 2048
    hubs = rng.uniform(300, extent - 300, (4, 2))
    centers = np.clip(hubs[rng.integers(0, 4, 40)] + rng.normal(0, 120, (40, 2)), 0, extent - 1)
    spec = resolve().tiles()
    tiles = tile_image((extent, extent), [tuple(c) for c in centers], spec)

    arr = np.array([t.as_array() for t in tiles])
    ious = iou_matrix(arr, arr)
    np.fill_diagonal(ious, 0.0)
    in_bounds = bool((arr[:, :2] >= 0).all() and (arr[:, 2:] <= extent).all())

    # one small ship at every centre
    anns = []
    for cx, cy in centers.astype(int):
        m = np.zeros((extent, extent), bool)
        m[max(cy - 3, 0) : cy + 4, max(cx - 9, 0) : cx + 10] = True
        anns.append(Annotation.from_mask(m))
    records = [
        (tid, ann)
        for tid, t in enumerate(tiles)
        for ann in anns
        if ann.box.x1 >= t.x1 and ann.box.x2 <= t.x2 and ann.box.y1 >= t.y1 and ann.box.y2 <= t.y2
    ]
    buf = io.StringIO()
    write_annotations(buf, tiles, records)
    buf.seek(0)
    read_tiles, insts = read_annotations(buf)
    back = [
        ann
        for tid, tile in enumerate(read_tiles)
        for ann in instances_to_annotations(
            [(t, cls, box.translate(tile.x1, tile.y1), crop) for t, cls, box, crop in insts], (extent, extent), tid
        )
    ]
    exact = len(back) == len(records) and all(
        np.array_equal(b.mask, a.mask) and b.box == a.box for b, (_, a) in zip(back, records)
    )
    ok = float(ious.max(initial=0.0)) <= 0.1 and in_bounds and exact and len(records) > 0
    detail = (
        f"{len(tiles)} tiles from 40 centres, max pairwise IoU {ious.max(initial=0.0):.3f} (tol 0.1), "
        f"{'all in bounds' if in_bounds else 'out of bounds'}, {len(records)} remapped records "
        f"{'round-trip exactly' if exact else 'differ'}"
    )
    report(8, ok, detail, time.perf_counter() - t0, 10)
