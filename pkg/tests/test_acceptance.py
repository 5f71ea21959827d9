"""Acceptance suite: every criterion at its stated tolerance, one printed
pass/fail line each. Criteria 6 and 7 run the full synthetic adaptation
experiments and take several minutes; run with `-v -s` to watch the lines."""

import time

import numpy as np

from seqadapt import analysis as an
from seqadapt import dann as dn
from seqadapt import data as dt
from seqadapt import encoder as enc
from seqadapt import metrics as mx
from seqadapt import optim as op
from seqadapt import trainer as tr
from seqadapt import verify
from seqadapt.autodiff import Tensor


def report(criterion: str, passed: bool, detail: str):
    print(f"\nACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} "
          f"({detail})")
    assert passed, f"criterion {criterion}: {detail}"


# ---------------------------------------------------------------------------
# 1. gradient correctness


def test_criterion_1_gradient_correctness():
    start = time.time()
    worst_op = 0.0
    worst_model = 0.0
    for seed in range(20):
        worst_op = max(worst_op, max(verify.op_checks(seed).values()))
        worst_model = max(worst_model, verify.full_model_check(seed))
    elapsed = time.time() - start
    ok = worst_op < 1e-4 and worst_model < 1e-4 and elapsed < 60.0
    report("1 gradient correctness", ok,
           f"op max rel err {worst_op:.2e}, pipeline max rel err "
           f"{worst_model:.2e}, 20 seeds in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. GRL exactness


def test_criterion_2_grl_exactness():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((6, 5)))
    forward_identity = dn.grl(x).values is x.values
    up = rng.standard_normal((6, 5))
    negation = np.array_equal(dn.grl_backward(up), -up)

    source, target = dt.generate(dt.GeneratorConfig(
        n_classes=3, samples_per_class=20, timesteps=8, bands=3, seed=1))
    kwargs = dict(
        batch_size=32, seed=9,
        encoder=enc.EncoderConfig(timesteps=8, bands=3, d_model=8,
                                  n_layers=1, n_heads=2, d_inner=8),
        head=dn.HeadConfig(hidden=8, classes=3))
    bm, _ = tr.train_baseline(tr.TrainConfig(
        mode="baseline", schedules=op.Schedules(epochs=3), **kwargs), source)
    dm, _ = tr.train_dann(tr.TrainConfig(
        mode="dann", schedules=op.Schedules(epochs=3, lambda_max=0.0),
        **kwargs), source, target)
    shared = list(bm.params.feature.named()) + list(bm.params.label.named())
    shared_d = list(dm.params.feature.named()) + list(dm.params.label.named())
    equivalence = all(np.array_equal(p.values, q.values)
                      for (_, p), (_, q) in zip(shared, shared_d))
    report("2 GRL exactness", forward_identity and negation and equivalence,
           f"forward identity {forward_identity}, exact negation {negation}, "
           f"lambda=0 step equivalence {equivalence}")


# ---------------------------------------------------------------------------
# 3. MMD oracle equivalence


def naive_triple_sum(x, y, sigma):
    m, n = len(x), len(y)
    xx = sum(an.gaussian_kernel(x[i], x[j], sigma)
             for i in range(m) for j in range(m) if j != i)
    yy = sum(an.gaussian_kernel(y[i], y[j], sigma)
             for i in range(n) for j in range(n) if j != i)
    xy = sum(an.gaussian_kernel(x[i], y[j], sigma)
             for i in range(m) for j in range(n))
    return xx / (m * (m - 1)) - 2 * xy / (m * n) + yy / (n * (n - 1))


def test_criterion_3_mmd_oracle_equivalence():
    rng = np.random.default_rng(2)
    worst = 0.0
    symmetric = True
    for _ in range(50):
        m = int(rng.integers(2, 21))
        n = int(rng.integers(2, 21))
        d = int(rng.integers(1, 6))
        x = rng.standard_normal((m, d)) * rng.uniform(0.5, 2)
        y = rng.standard_normal((n, d)) + rng.uniform(-1, 1)
        sigma = float(rng.uniform(0.3, 4.0))
        ours = an.mmd_squared(x, y, sigma)
        worst = max(worst, abs(ours - naive_triple_sum(x, y, sigma)))
        symmetric = symmetric and ours == an.mmd_squared(y, x, sigma)
    constant = abs(an.mmd_squared(rng.standard_normal((10, 3)),
                                  rng.standard_normal((12, 3)), 1e8))
    ok = worst < 1e-12 and symmetric and constant < 1e-9
    report("3 MMD oracle equivalence", ok,
           f"max |diff| vs triple sum {worst:.2e} over 50 pairs, symmetry "
           f"exact {symmetric}, constant-kernel |MMD| {constant:.2e}")


# ---------------------------------------------------------------------------
# 4. metric oracles


def test_criterion_4_metric_oracles():
    fixture = np.array([[2, 1], [0, 3]])
    acc_ok = abs(mx.accuracy(fixture) - 5 / 6) < 1e-12
    f1_ok = abs(mx.macro_f1(fixture) - (0.8 + 6 / 7) / 2) < 1e-12
    kappa_ok = abs(mx.cohens_kappa(fixture) - 2 / 3) < 1e-12
    product = np.outer([2, 3, 5], [4, 1, 5])
    kappa_zero = abs(mx.cohens_kappa(product)) < 1e-12
    kappa_one = abs(mx.cohens_kappa(np.diag([3, 1, 7])) - 1.0) < 1e-12
    ok = acc_ok and f1_ok and kappa_ok and kappa_zero and kappa_one
    report("4 metric oracles", ok,
           f"accuracy {acc_ok}, macro-F1 {f1_ok}, kappa fixture {kappa_ok}, "
           f"kappa marginal-product zero {kappa_zero}, kappa diagonal one "
           f"{kappa_one}")


# ---------------------------------------------------------------------------
# 5. schedule values


def test_criterion_5_schedule_values():
    lam0 = op.lambda_at(0.0, 0.2, 10.0)
    lam_half = op.lambda_at(0.5, 0.2, 10.0)
    lam_full = op.lambda_at(1.0, 0.2, 10.0)
    sched_ok = (lam0 == 0.0
                and abs(lam_half - 0.197320) < 1e-5
                and abs(lam_full - 0.199982) < 1e-5)
    lr_ok = (op.lr_at(0) == 0.001
             and abs(op.lr_at(1) - 0.00099) < 1e-12
             and abs(op.lr_at(250) - 0.001 * 0.99 ** 250) < 1e-15
             and abs(op.lr_at(250) - 8.106e-5) < 1e-8)
    report("5 schedule values", sched_ok and lr_ok,
           f"lambda(0)={lam0}, lambda(0.5)={lam_half:.6f}, "
           f"lambda(1)={lam_full:.6f}, lr(250)={op.lr_at(250):.4e}")


# ---------------------------------------------------------------------------
# 6/7. synthetic adaptation experiments


def run_adaptation_experiment(shift, seeds=(0, 1, 2), epochs=60):
    encoder_config = enc.EncoderConfig(timesteps=16, bands=4, d_model=32,
                                       n_layers=2, n_heads=2, d_inner=32)
    head = dn.HeadConfig(hidden=64, classes=5)
    rows = []
    for seed in seeds:
        source, target = dt.generate(dt.GeneratorConfig(seed=seed,
                                                        shift=shift))
        base_model, base_log = tr.train_baseline(tr.TrainConfig(
            mode="baseline", seed=seed, encoder=encoder_config, head=head,
            schedules=op.Schedules(epochs=epochs)), source)
        dann_model, _ = tr.train_dann(tr.TrainConfig(
            mode="dann", seed=seed, encoder=encoder_config, head=head,
            schedules=op.Schedules(epochs=epochs, lambda_max=0.2)),
            source, target)
        _, base_rec, base_feat_t = tr.evaluate(base_model, target, 1000)
        _, _, base_feat_s = tr.evaluate(base_model, source, 1000)
        _, dann_rec, dann_feat_t = tr.evaluate(dann_model, target, 1000)
        _, _, dann_feat_s = tr.evaluate(dann_model, source, 1000)
        sigma = an.median_heuristic(
            np.concatenate([base_feat_s, base_feat_t]))
        dann_sigma = an.median_heuristic(
            np.concatenate([dann_feat_s, dann_feat_t]))
        rows.append(dict(
            seed=seed,
            source_train=base_log.records[-1].acc_train,
            base_target=base_rec.accuracy,
            dann_target=dann_rec.accuracy,
            base_mmd=an.mmd_squared(base_feat_s, base_feat_t, sigma),
            dann_mmd=an.mmd_squared(dann_feat_s, dann_feat_t, sigma),
            dann_mmd_own_sigma=an.mmd_squared(dann_feat_s, dann_feat_t,
                                              dann_sigma),
        ))
    return rows


def mean(rows, key):
    return float(np.mean([r[key] for r in rows]))


def test_criterion_6_synthetic_adaptation():
    shift = dt.DomainShift()
    pinned = (shift.gain == 1.15 and shift.offset == 0.1
              and shift.time_shift == 2 and shift.noise_std == 0.05)
    assert pinned, "default generator shift drifted from the pinned values"

    start = time.time()
    rows = run_adaptation_experiment(shift)
    elapsed = time.time() - start

    src_train = mean(rows, "source_train")
    base_tgt = mean(rows, "base_target")
    dann_tgt = mean(rows, "dann_target")
    gap_ok = src_train - base_tgt >= 0.10
    improve_ok = dann_tgt - base_tgt >= 0.10
    ratios = [r["dann_mmd"] / r["base_mmd"] for r in rows]
    mmd_ok = float(np.mean(ratios)) <= 0.2
    runtime_ok = elapsed <= 15 * 60
    ok = gap_ok and improve_ok and mmd_ok and runtime_ok
    report("6 synthetic adaptation", ok,
           f"3-seed means: source-train {src_train:.3f}, baseline target "
           f"{base_tgt:.3f}, adversarial target {dann_tgt:.3f} "
           f"(+{100 * (dann_tgt - base_tgt):.1f} pts), MMD ratios "
           f"{[f'{r:.3f}' for r in ratios]}, runtime {elapsed:.0f}s")


def test_criterion_7_low_gap_negative_control():
    rows = run_adaptation_experiment(
        dt.DomainShift(gain=1.0, offset=0.0, time_shift=0, noise_std=0.05))
    base_tgt = mean(rows, "base_target")
    dann_tgt = mean(rows, "dann_target")
    within = abs(dann_tgt - base_tgt) <= 0.03
    # each model's own median-bandwidth MMD must read "no gap"
    base_mmds = [r["base_mmd"] for r in rows]
    dann_mmds = [r["dann_mmd_own_sigma"] for r in rows]
    mmd_ok = all(abs(v) < 0.05 for v in base_mmds + dann_mmds)
    report("7 low-gap negative control", within and mmd_ok,
           f"baseline target {base_tgt:.3f} vs adversarial {dann_tgt:.3f} "
           f"(|delta| {100 * abs(dann_tgt - base_tgt):.2f} pts), "
           f"MMDs {[f'{v:.4f}' for v in base_mmds + dann_mmds]}")


# ---------------------------------------------------------------------------
# 8. determinism and persistence


def test_criterion_8_determinism_and_persistence(tmp_path):
    source, target = dt.generate(dt.GeneratorConfig(
        n_classes=3, samples_per_class=25, timesteps=8, bands=3, seed=4))
    config = dict(
        mode="dann", batch_size=32, seed=21,
        encoder=enc.EncoderConfig(timesteps=8, bands=3, d_model=8,
                                  n_layers=1, n_heads=2, d_inner=8),
        head=dn.HeadConfig(hidden=8, classes=3))
    logs = []
    models = []
    for _ in range(2):
        model, log = tr.train_dann(tr.TrainConfig(
            schedules=op.Schedules(epochs=4), **config), source, target)
        logs.append(log.to_csv())
        models.append(model)
    runlogs_identical = logs[0] == logs[1]

    path = tmp_path / "model.tdpt"
    models[0].save(path)
    restored = tr.Model.load(path)
    _, direct, _ = tr.evaluate(models[0], target)
    _, loaded, _ = tr.evaluate(restored, target)
    metrics_identical = direct.as_dict() == loaded.as_dict()
    report("8 determinism and persistence",
           runlogs_identical and metrics_identical,
           f"bitwise-identical run logs {runlogs_identical}, checkpoint "
           f"round-trip metrics identical {metrics_identical}")


# ---------------------------------------------------------------------------
# 9. PCA properties


def test_criterion_9_pca_properties():
    from scipy.spatial.distance import pdist
    rng = np.random.default_rng(5)
    planar = np.zeros((80, 9))
    planar[:, 1] = rng.standard_normal(80) * 2
    planar[:, 6] = rng.standard_normal(80)
    projected, explained = an.pca_project(planar, 2)
    distance_ok = bool(np.allclose(pdist(projected), pdist(planar),
                                   atol=1e-9))
    variance_ok = abs(explained.sum() - 1.0) < 1e-9

    cloud = rng.standard_normal((200, 6)) * np.array([4, 3, 2, 1, 0.5, 0.2])
    _, ev = an.pca_project(cloud, 3)
    ordering_ok = bool((ev >= 0).all()
                       and all(b <= a + 1e-12 for a, b in zip(ev, ev[1:]))
                       and ev.sum() <= 1.0 + 1e-9)

    src = rng.standard_normal((30, 6))
    tgt = rng.standard_normal((40, 6)) + 1.0
    gap = an.domain_gap_report(src, tgt)
    labels = np.concatenate([np.zeros(30, int), np.ones(40, int)])
    csv2 = an.projection_csv(gap.projection_2d, gap.domains, labels)
    csv3 = an.projection_csv(gap.projection_3d, gap.domains, labels)
    schema_ok = (csv2.splitlines()[0] == "domain,class,pc1,pc2"
                 and csv3.splitlines()[0] == "domain,class,pc1,pc2,pc3"
                 and len(csv2.splitlines()) == 71)
    ok = distance_ok and variance_ok and ordering_ok and schema_ok
    report("9 PCA properties", ok,
           f"exact-subspace distances preserved {distance_ok}, explained "
           f"variance sums to 1 {variance_ok}, ordering/bounds {ordering_ok},"
           f" joint projection schema {schema_ok}")
