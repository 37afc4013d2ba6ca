"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The verdict lines are printed in the "acceptance criteria" section of the
pytest summary. Criteria 5, 6 and 8 train on the shipped synthetic config
and take a few minutes.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from torch.func import functional_call

import oracles
from conftest import record
from sslosr import losses
from sslosr.evaluation import auroc, roc_curve, trapezoid_area
from sslosr.experiment import ExperimentConfig, load_config, run_experiment
from sslosr.nets import ArchConfig, init_params

ROOT = Path(__file__).resolve().parents[1]
SYNTH = ROOT / "configs" / "synth2d.yaml"
KINDS = ("softmax", "fm-gan", "arp-gan")


# -- 1. algebraic identities -------------------------------------------------

def test_criterion_1_algebraic_identities():
    g = np.random.default_rng(101)
    n, worst_fake, worst_shift = 10**5, 0.0, 0.0
    t0 = time.perf_counter()
    for K in range(2, 11):
        x = g.normal(0, 5, (n // 9 + 1, K))
        padded = np.concatenate([x, np.zeros((len(x), 1))], axis=1)
        diff = (losses.p_fm_fake(x) - losses.softmax_k(padded)[:, -1]).abs().max()
        worst_fake = max(worst_fake, float(diff))
        c = g.uniform(-50, 50, (len(x), 1))
        shift = (losses.softmax_k(x) - losses.softmax_k(x + c)).abs().max()
        worst_shift = max(worst_shift, float(shift))
    secs = time.perf_counter() - t0
    ok = worst_fake < 1e-12 and worst_shift < 1e-9
    record(1, ok, f"p_fake vs K+1 softmax max diff {worst_fake:.2e} (<1e-12), shift {worst_shift:.2e} (<1e-9), {secs:.1f}s")
    assert ok


# -- 2. oracle agreement ------------------------------------------------------

def _rel(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def _oracle_cases(g):
    K, B, m = int(g.integers(2, 8)), int(g.integers(1, 6)), int(g.integers(2, 7))
    x = lambda *s: g.normal(0, 2, s)
    y = g.integers(1, K + 1, B)
    pts, radius, gamma = x(K, m), g.uniform(0, 3, K), float(g.uniform(0, 1))
    rp = losses.RPTensors(torch.tensor(pts), torch.tensor(radius), gamma)
    emb, lab_emb, logits = x(B, m), x(B, m), x(B, K)
    dr, df = g.uniform(0.01, 0.99, B), g.uniform(0.01, 0.99, B)
    kp_fake, kp_lab, unlab = x(B, K + 1), x(B, K + 1), x(B + 1, K)
    fr, ff = x(B + 1, m), x(B, m)
    c, p = x(m), x(m)
    return {
        "softmax_k": (losses.softmax_k(logits).numpy(), [oracles.softmax(r) for r in logits]),
        "p_fm_fake": (losses.p_fm_fake(logits).numpy(), [oracles.p_fm_fake(r) for r in logits]),
        "p_fm_real": (losses.p_fm_real(logits).numpy(), [oracles.p_fm_real(r) for r in logits]),
        "kplus1_dc_loss": (float(losses.kplus1_dc_loss(kp_fake, kp_lab, y)), oracles.kplus1_loss(kp_fake, kp_lab, y)),
        "fm_dc_loss": (float(losses.fm_dc_loss(logits, unlab, logits, y)), oracles.fm_dc_loss(logits, unlab, logits, y)),
        "fm_gen_loss": (float(losses.fm_gen_loss(fr, ff)), oracles.fm_gen_loss(fr, ff)),
        "arp_distance": ([float(v) for v in losses.arp_distance(c, p)], oracles.arp_distance(c, p)),
        "p_arp": (losses.p_arp(emb, pts).numpy(), [oracles.p_arp(e, pts) for e in emb]),
        "arp_classifier_loss": (float(losses.arp_classifier_loss(emb, y, rp)),
                                oracles.arp_classifier_loss(emb, y, pts, radius, gamma)),
        "entropy_I": (float(losses.entropy_I(emb, pts)), oracles.entropy(emb, pts)),
        "arp_gan_d_loss": (float(losses.arp_gan_d_loss(dr, df)), oracles.arp_gan_d_loss(dr, df)),
        "arp_gan_g_loss": (float(losses.arp_gan_g_loss(df, emb, pts)), oracles.arp_gan_g_loss(df, emb, pts)),
        "arp_gan_c_loss": (float(losses.arp_gan_c_loss(emb, lab_emb, y, rp)),
                           oracles.arp_gan_c_loss(emb, lab_emb, y, pts, radius, gamma)),
    }


def test_criterion_2_loss_oracles():
    g = np.random.default_rng(202)
    worst: dict[str, float] = {}
    for _ in range(10**3):
        for op, (ours, ref) in _oracle_cases(g).items():
            worst[op] = max(worst.get(op, 0.0), _rel(ours, ref))
    bad = {op: e for op, e in worst.items() if not e < 1e-6}
    ok = not bad
    record(2, ok, f"{len(worst)} ops x 1000 batches, worst rel err {max(worst.values()):.1e} (<1e-6)"
           + (f"; failing {sorted(bad)}" if bad else ""))
    assert ok, bad


# -- 3. finite-difference gradients ------------------------------------------

def _grad_error(f, arrays):
    """Autograd of ``f`` at ``arrays`` against central differences (h=1e-4).

    Relative error is per entry, ``|a - n| / max(|a|, |n|, 1e-6)``.
    """
    leaves = [torch.tensor(a, requires_grad=True) for a in arrays]
    out = f(*leaves)
    auto = torch.autograd.grad(out, leaves, allow_unused=True)
    auto = [np.zeros_like(a) if ga is None else ga.numpy() for a, ga in zip(arrays, auto)]

    def value(*xs):
        with torch.no_grad():
            return float(f(*[torch.tensor(x) for x in xs]))

    numeric = oracles.central_difference(value, [np.array(a, dtype=np.float64) for a in arrays], h=1e-4)
    return max(
        float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6), initial=0.0))
        for a, n in zip(auto, numeric)
    )


def _as_value(loss):
    return loss.value if isinstance(loss, losses.LossValue) else loss


def _kink_margin(net, x):
    """Smallest |pre-activation| feeding a LeakyReLU in the classifier body."""
    h, margin = torch.tensor(x), math.inf
    for layer in net.body:
        h = layer(h)
        if isinstance(layer, torch.nn.Linear):
            margin = min(margin, float(h.abs().min()))
    return margin


def _net_case(kind, arch, seed, x, make_loss):
    """Loss as a function of every parameter of a float64 network.

    Inputs are redrawn until no pre-activation sits within 0.05 of a
    LeakyReLU kink, so a step of h cannot straddle one.
    """
    net = init_params(kind, seed, arch)
    g = np.random.default_rng(seed)
    with torch.no_grad():
        while _kink_margin(net, x) < 0.05:
            x = g.normal(0, 1.5, x.shape)
    names = [n for n, _ in net.named_parameters()]
    arrays = [p.detach().numpy().copy() for _, p in net.named_parameters()]

    def f(*params):
        return _as_value(make_loss(functional_call(net, dict(zip(names, params)), (torch.tensor(x),))))

    return f, arrays


def _gradient_cases(g):
    K, B, m = 3, 4, 5
    x = lambda *s: g.normal(0, 1.5, s)
    y = np.array([1, 2, 3, 1])
    pts, emb, lab_emb = x(K, m), x(B, m), x(B, m)
    de = np.array([((lab_emb[i] - pts[y[i] - 1]) ** 2).mean() for i in range(B)])
    # per-category ranges well away from every d_e so the hinge has no kink within h
    r_active = np.array([0.5 * de[y == k].min() for k in range(1, K + 1)])
    r_inactive = np.array([2.0 * de[y == k].max() + 1.0 for k in range(1, K + 1)])
    d_real, d_fake = g.uniform(0.1, 0.9, B), g.uniform(0.1, 0.9, B)
    w = x(B, K)
    rp = lambda p, r: losses.RPTensors(p, r, 0.3)
    cases = {
        "softmax_k": (lambda a: (losses.softmax_k(a) * torch.tensor(w)).sum(), [x(B, K)]),
        "p_fm_fake": (lambda a: (losses.p_fm_fake(a) * torch.tensor(w[:, 0])).sum(), [x(B, K)]),
        "kplus1_dc_loss": (lambda a, b: losses.kplus1_dc_loss(a, b, y), [x(B, K + 1), x(B, K + 1)]),
        "fm_dc_loss": (lambda a, b, c: losses.fm_dc_loss(a, b, c, y), [x(B, K), x(B + 1, K), x(B, K)]),
        "fm_gen_loss": (lambda a, b: losses.fm_gen_loss(a, b), [x(B + 2, m), x(B, m)]),
        "arp_distance": (lambda c, p: sum(losses.arp_distance(c, p)), [x(m), x(m)]),
        "p_arp": (lambda e, p: (losses.p_arp(e, p) * torch.tensor(w)).sum(), [emb, pts]),
        "entropy_I": (lambda e, p: losses.entropy_I(e, p), [emb, pts]),
        "arp_classifier_loss/hinge-active": (lambda e, p, r: losses.arp_classifier_loss(e, y, rp(p, r)), [lab_emb, pts, r_active]),
        "arp_classifier_loss/hinge-inactive": (lambda e, p, r: losses.arp_classifier_loss(e, y, rp(p, r)), [lab_emb, pts, r_inactive]),
        "arp_gan_d_loss": (lambda a, b: losses.arp_gan_d_loss(a, b), [d_real, d_fake]),
        "arp_gan_g_loss": (lambda d, e, p: losses.arp_gan_g_loss(d, e, p), [d_fake, emb, pts]),
        "arp_gan_c_loss/hinge-active": (lambda e, l, p, r: losses.arp_gan_c_loss(e, l, y, rp(p, r)), [emb, lab_emb, pts, r_active]),
        "arp_gan_c_loss/hinge-inactive": (lambda e, l, p, r: losses.arp_gan_c_loss(e, l, y, rp(p, r)), [emb, lab_emb, pts, r_inactive]),
    }
    # classifier parameters, through the FM and ARP heads
    arch = ArchConfig((2,), K, embedding_dim=m, hidden=6, dtype="float64")
    xin = x(B, 2)
    other = x(B + 1, K)
    cases["fm_dc_loss/classifier-params"] = _net_case(
        "classifier-fm", arch, 1, xin, lambda out: losses.fm_dc_loss(out.logits, other, out.logits, y))
    real_feats = x(B, 6)
    cases["fm_gen_loss/classifier-params"] = _net_case(
        "classifier-fm", arch, 2, xin, lambda out: losses.fm_gen_loss(real_feats, out.features))
    rp_fixed = losses.RPTensors(torch.tensor(pts), torch.tensor(r_active), 0.3)
    cases["arp_classifier_loss/classifier-params"] = _net_case(
        "classifier-arp", arch, 3, xin, lambda out: losses.arp_classifier_loss(out.embedding, y, rp_fixed))
    cases["arp_gan_c_loss/classifier-params"] = _net_case(
        "classifier-arp", arch, 4, xin, lambda out: losses.arp_gan_c_loss(out.embedding, out.embedding, y, rp_fixed))
    return cases


def test_criterion_3_gradients():
    g = np.random.default_rng(303)
    errors = {}
    for _ in range(3):
        for name, (f, arrays) in _gradient_cases(g).items():
            err = _grad_error(lambda *a, f=f: _as_value(f(*a)), arrays)
            errors[name] = max(errors.get(name, 0.0), err)
    bad = {k: v for k, v in errors.items() if not v < 1e-4}
    ok = not bad
    record(3, ok, f"{len(errors)} gradient cases, worst rel err {max(errors.values()):.1e} (<1e-4)"
           + (f"; failing {sorted(bad)}" if bad else ""))
    assert ok, bad


# -- 4. AUROC -------------------------------------------------------------------------

def _pairwise(known, novel):
    k, n = np.asarray(known)[:, None], np.asarray(novel)[None, :]
    return float(((k > n) + 0.5 * (k == n)).mean())


def test_criterion_4_auroc():
    g = np.random.default_rng(404)
    worst_routes = worst_oracle = 0.0
    for i in range(10**3):
        nk, nn = int(g.integers(1, 201)), int(g.integers(1, 201))
        if i % 2:  # tie-heavy: few distinct levels
            levels = g.normal(size=int(g.integers(1, 6)))
            known, novel = g.choice(levels, nk), g.choice(levels, nn)
        else:
            known, novel = g.normal(0.5, 1, nk), g.normal(0, 1, nn)
        a = auroc(known, novel)
        worst_routes = max(worst_routes, abs(trapezoid_area(roc_curve(known, novel)) - a))
        worst_oracle = max(worst_oracle, abs(_pairwise(known, novel) - a))
    exact = auroc([0.35, 0.8], [0.1, 0.4])
    ok = worst_routes <= 1e-9 and worst_oracle <= 1e-9 and exact == 0.75
    record(4, ok, f"trapezoid vs Mann-Whitney {worst_routes:.1e}, vs pairwise {worst_oracle:.1e} (<=1e-9); "
           f"[0.35,0.8]/[0.1,0.4] -> {exact}")
    assert ok


# -- 5, 6, 8. synthetic end-to-end --------------------------------------------

def _variant(cfg: ExperimentConfig, kind: str) -> ExperimentConfig:
    train = cfg.train.model_copy(update={"model_kind": kind})
    return cfg.model_copy(update={"name": f"synth2d-{kind}", "train": train})


def _run_all(root: Path) -> dict:
    cfg = load_config(SYNTH)
    out = {}
    for kind in KINDS:
        t0 = time.perf_counter()
        ledger = run_experiment(_variant(cfg, kind), root / kind, base_dir=SYNTH.parent, jobs=cfg.trials)
        out[kind] = (ledger, time.perf_counter() - t0, (root / kind / "ledger.json").read_bytes())
    return out


@pytest.fixture(scope="module")
def synth_runs(tmp_path_factory):
    return _run_all(tmp_path_factory.mktemp("synth-a"))


def _metric(ledger, name):
    by_seed = {int(r["seed"]): float(r[name]) for r in ledger.rows}
    return [by_seed[s] for s in ledger.seeds]


def test_criterion_5_synthetic_pattern(synth_runs):
    base_acc, base_auc = _metric(synth_runs["softmax"][0], "accuracy"), _metric(synth_runs["softmax"][0], "auroc")
    parts, ok = [], True
    for kind in ("fm-gan", "arp-gan"):
        ledger = synth_runs[kind][0]
        acc, auc = _metric(ledger, "accuracy"), _metric(ledger, "auroc")
        wins = sum(a > ba and u > bu for a, u, ba, bu in zip(acc, auc, base_acc, base_auc))
        ok &= len(ledger.rows) == 5 and wins >= 4
        parts.append(f"{kind} beats softmax on both in {wins}/5")
    fm = synth_runs["fm-gan"][0]
    fm_acc, fm_auc = _metric(fm, "accuracy"), _metric(fm, "auroc")
    floor = min(fm_acc) >= 0.90 and min(fm_auc) >= 0.85
    ok &= floor
    slowest = max(t for _, t, _ in synth_runs.values())
    ok &= slowest <= 300
    parts.append(f"FM-GAN min acc {min(fm_acc):.3f} (>=0.90), min AUROC {min(fm_auc):.3f} (>=0.85) over all seeds")
    parts.append(f"slowest run {slowest:.0f}s (<=300s)")
    record(5, ok, "; ".join(parts))
    assert ok


def test_criterion_6_fm_arp_equivalence(synth_runs):
    fm = np.mean(_metric(synth_runs["fm-gan"][0], "auroc"))
    arp = np.mean(_metric(synth_runs["arp-gan"][0], "auroc"))
    ok = abs(fm - arp) <= 0.08
    record(6, ok, f"mean AUROC FM-GAN {fm:.4f} vs ARP-GAN {arp:.4f}, gap {abs(fm - arp):.4f} (<=0.08)")
    assert ok


def test_criterion_7_full_fidelity_config_ships():
    # documentation criterion: the overnight config must exist and validate, but carries no numeric gate
    cfg = ExperimentConfig.model_validate(__import__("yaml").safe_load((ROOT / "configs" / "mnist-fashion.yaml").read_text()))
    readme = (ROOT / "README.md").read_text()
    ok = cfg.train.model_kind == "fm-gan" and "mnist-fashion.yaml" in readme
    record(7, ok, "full-scale table numbers are not reproduced at desk scale; "
           "configs/mnist-fashion.yaml validates and is documented (no numeric gate)")
    assert ok


def test_criterion_8_determinism(synth_runs, tmp_path):
    again = _run_all(tmp_path)
    same = {kind: again[kind][2] == synth_runs[kind][2] for kind in KINDS}
    ok = all(same.values())
    record(8, ok, "rerun with the same base seed gives byte-identical ledger.json for "
           + ", ".join(f"{k}={'yes' if v else 'NO'}" for k, v in same.items()))
    assert ok
