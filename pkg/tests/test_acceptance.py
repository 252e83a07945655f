"""Acceptance suite: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -s`` (the lines are also
repeated in the terminal summary). Criteria 8 and 9 run the full pipeline on
the bundled synthetic configuration twice and take several minutes.
"""

import csv
import time

import numpy as np
import pytest
from scipy.special import expit
from test_clustering import naive_ahc, random_partition, same_partition
from test_der import brute_force_der, random_annotation

from diarkit.audio_io import DiarizationAnnotation
from diarkit.bilstm import LOGIT_LAYER as BILSTM_LOGITS
from diarkit.bilstm import BilstmConfig, build_scorer, pair_sequences, partition_batches, predict_similarity
from diarkit.cli import main
from diarkit.clustering import ahc, jacobi_eigh, laplacian, spectral_cluster
from diarkit.der import compute_der
from diarkit.nnet import LSTM, TDNN, BatchNorm, Dense, Network, ReLU, Sigmoid, Softmax, StatsPool, gradient_check, loss_noise
from diarkit.plda import normalize_score
from diarkit.xvector import LOGITS_LAYER as XVEC_LOGITS
from diarkit.xvector import XvecConfig, architecture_table, build_extractor

GRAD_TOL = 1e-6
GRAD_BUDGET_S = 60.0
DER_GATE = 10.0
RUNTIME_BUDGET_S = 15 * 60


def _linear_loss(shape, seed=3):
    R = np.random.default_rng(seed).standard_normal(shape)
    return lambda y: (float(np.sum(R * y)), R)


def _net(layers, seed=0):
    net = Network(layers, seed)
    r = np.random.default_rng(seed)
    for l in net.layers:
        l.init_params(r)
    return net


def test_1_gradient_correctness(verdict):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    cases = {
        "dense": ([Dense(5, 4)], (3, 5)),
        "relu": ([Dense(5, 4), ReLU()], (3, 5)),
        "sigmoid": ([Sigmoid()], (3, 5)),
        "softmax": ([Softmax()], (3, 5)),
        "batchnorm": ([BatchNorm(5)], (2, 6, 5)),
        "tdnn": ([TDNN(4, 3, (-3, 0, 2))], (2, 7, 4)),
        "stats_pool": ([StatsPool(4)], (2, 7, 4)),
        "lstm-forward": ([LSTM(4, 3, "forward")], (2, 6, 4)),
        "lstm-backward": ([LSTM(4, 3, "backward")], (2, 6, 4)),
        "lstm-bidirectional": ([LSTM(4, 3, "bidirectional")], (2, 6, 4)),
    }
    errors = {}
    for name, (layers, shape) in cases.items():
        net = _net(layers)
        x = rng.standard_normal(shape)
        y = net.forward(x, True)[0]
        errors[name] = gradient_check(net, x, _linear_loss(y.shape), h=1e-5, check_input=True)

    xcfg = XvecConfig(num_speakers=3, shrink=1 / 64)
    xnet = Network.from_spec(build_extractor(xcfg), seed=2)
    x = rng.normal(size=(8, 20, 13))
    errors["x-vector TDNN (shrunk)"] = gradient_check(
        xnet, x, _linear_loss((8, 3)), h=1e-5, num_coords=400, stop=XVEC_LOGITS, check_input=True
    )
    sigma = loss_noise(xnet, x, _linear_loss((8, 3)), stop=XVEC_LOGITS, coords=[(-1, None, i) for i in range(5)])

    bcfg = BilstmConfig(embedding_dim=4, hidden=8, dense=8)
    bnet = Network.from_spec(build_scorer(bcfg), seed=1)
    xb = pair_sequences(rng.normal(size=(7, 4)), [0, 2, 5], np.arange(7))
    errors["Bi-LSTM scorer (shrunk)"] = gradient_check(
        bnet, xb, _linear_loss((3, 7, 1)), h=1e-5, num_coords=400, stop=BILSTM_LOGITS, check_input=True
    )
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] < GRAD_TOL and elapsed < GRAD_BUDGET_S
    detail = (
        f"max rel err {errors[worst]:.2e} ({worst}) over {len(errors)} cases, {elapsed:.1f} s; "
        f"x-vector loss noise {sigma:.1e}, relative scale for |g| > {3 * sigma / 1e-5 / GRAD_TOL:.1e}"
    )
    assert verdict(1, "gradient check < 1e-6 on every layer and shrunk networks in < 60 s", ok, detail)


TABLE_512 = [
    ("tdnn1", 13, 512), ("tdnn2", 1536, 512), ("tdnn3", 1536, 512), ("tdnn4", 512, 512), ("tdnn5", 512, 1500),
    ("stats", 1500, 3000), ("tdnn6", 3000, 512), ("tdnn7", 512, 512),
]  # fmt: skip


def test_2_architecture_fidelity(verdict):
    results = []
    for emb in (512, 128):
        net = Network.from_spec(build_extractor(XvecConfig(num_speakers=10, embedding_dim=emb)))
        rows = [(b, i, o) for b, _, i, o in architecture_table(net)]
        expect = [r if r[0] not in ("tdnn6", "tdnn7") else r for r in TABLE_512]
        expect = [("tdnn6", 3000, emb) if r[0] == "tdnn6" else ("tdnn7", emb, 512) if r[0] == "tdnn7" else r for r in expect]
        expect.append(("output", 512, 10))
        results.append(rows == expect)
        pooled = [net(np.zeros((1, T, 13)), stop="stats").shape[1] for T in (1, 16, 50)]
        results.append(pooled == [3000, 3000, 3000])
    assert verdict(2, "full-scale extractor matches the reference architecture table", all(results), "tdnn6 in {512, 128}")


def test_3_der_oracle(verdict):
    rng = np.random.default_rng(2025)
    mismatches = 0
    n = 1000
    for i in range(n):
        ref, hyp = random_annotation(rng), random_annotation(rng, prefix="h")
        collar = [0.0, 0.1, 0.25][i % 3]
        r = compute_der(ref, hyp, collar)
        got = tuple(round(v * 1000) for v in (r.err_spk, r.err_fas, r.err_miss, r.scored_time))
        mismatches += got != brute_force_der(ref, hyp, collar)

    def der(ref, hyp):
        return compute_der(DiarizationAnnotation("r", ref), DiarizationAnnotation("r", hyp), 0.0).der_percent

    hand = [
        der([("A", 0, 10)], [("A", 0, 10)]) == 0.0,
        der([("A", 0, 10)], [("A", 0, 8)]) == 20.0,
        der([("A", 0, 10), ("B", 10, 10)], [("X", 0, 20)]) == 50.0,
    ]
    ok = mismatches == 0 and all(hand)
    assert verdict(3, "DER equals brute-force oracle; hand cases 0/20/50 %", ok, f"{n} random pairs, {mismatches} mismatches")


def test_4_logistic(verdict):
    x = np.random.default_rng(4).uniform(-3, 3, size=10_000)
    l = normalize_score
    order = np.argsort(x)
    checks = [
        l(0.0) == 0.5,
        abs(l(1.0) - 0.993307) <= 1e-6,
        np.all(np.diff(l(x[order])) >= 0),
        np.max(np.abs(l(-x) - (1 - l(x)))) <= 1e-15,
        np.allclose(l(x), expit(5 * x), rtol=0, atol=1e-15),
    ]
    assert verdict(4, "logistic l(0)=0.5, l(1)=0.993307, monotone, odd symmetry on 1e4 points", all(checks), f"l(1)={l(1.0):.7f}")


@pytest.mark.slow
def test_5_clustering_recovery(verdict):
    rng = np.random.default_rng(5)
    trials, ahc_ok, sc_ok = 200, 0, 0
    for _ in range(trials):
        lab = random_partition(rng, 64)
        S = (lab[:, None] == lab[None, :]).astype(float)
        ahc_ok += same_partition(ahc(S, 0.5).labels, lab)
        sc_ok += same_partition(spectral_cluster(S, k=int(lab.max()) + 1, seed=0).labels, lab)
    oracle_ok, oracle_trials = 0, 200
    for _ in range(oracle_trials):
        n = int(rng.integers(2, 13))
        A = rng.random((n, n))
        S = (A + A.T) / 2
        thr = float(rng.uniform(0.3, 0.7))
        oracle_ok += ahc(S, thr).labels.tolist() == naive_ahc(S, thr).tolist()
    ok = ahc_ok == trials and sc_ok == trials and oracle_ok == oracle_trials
    detail = f"AHC {ahc_ok}/{trials}, SC {sc_ok}/{trials} block partitions (n<=64); naive AHC oracle {oracle_ok}/{oracle_trials} (n<=12)"
    assert verdict(5, "exact recovery of block partitions; AHC equals naive greedy oracle", ok, detail)


def test_6_eigensolver_quality(verdict):
    rng = np.random.default_rng(6)
    worst_res, lo, hi = 0.0, np.inf, -np.inf
    mats = []
    for n in (2, 3, 5, 10, 31, 64, 117):
        A = rng.random((n, n))
        mats.append((A + A.T) / 2)
        lab = rng.integers(0, 3, size=n)
        mats.append((lab[:, None] == lab[None, :]).astype(float))
    for S in mats:
        M = laplacian(S).symmetric
        w, V = jacobi_eigh(M)
        res = np.linalg.norm(M @ V - V * w, axis=0).max() / np.linalg.norm(M)
        worst_res = max(worst_res, res)
        lo, hi = min(lo, w.min()), max(hi, w.max())
    ok = worst_res <= 1e-8 and lo >= -1e-8 and hi <= 2 + 1e-8
    detail = f"max residual {worst_res:.1e}·||A||_F, spectrum [{lo:.2e}, {hi:.6f}] over {len(mats)} matrices"
    assert verdict(6, "Laplacian eigen-residuals and normalized spectrum bounds", ok, detail)


def test_7_batch_consistency(verdict):
    rng = np.random.default_rng(7)
    same = []
    for n in (2, 9, 30):
        cfg = BilstmConfig(embedding_dim=6, hidden=5, dense=4, max_seq_len=max(n, 2) + 3)
        net = Network.from_spec(build_scorer(cfg), seed=n)
        X = rng.normal(size=(n, 6))
        a = predict_similarity(net, X, cfg).values
        b = predict_similarity(net, X, cfg, batched=False).values
        same.append(a.tobytes() == b.tobytes())
    blocks = partition_batches(4, 128, 2)
    fig2 = sorted({c for _, c in blocks}) == [(0, 2), (2, 4)] and len(blocks) == 4
    assert verdict(7, "batched prediction bit-identical when n <= max_seq_len; n=4, max=2 half-split", all(same) and fig2)


@pytest.fixture(scope="module")
def bundled_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundled") / "run1"
    t0 = time.perf_counter()
    code = main(["run-all", "--out", str(out)])
    return out, code, time.perf_counter() - t0


def _summary(out):
    with open(out / "results" / "summary.csv") as f:
        return {(r["scorer"], r["clusterer"]): float(r["der_percent"]) for r in csv.DictReader(f)}


@pytest.mark.slow
def test_8_end_to_end_benchmark(bundled_run, verdict):
    out, code, elapsed = bundled_run
    if code != 0:
        assert verdict(8, "end-to-end synthetic benchmark", False, f"run-all exited with {code}")
    der = _summary(out)
    ba = der[("bilstm", "ahc")]
    ok = ba <= DER_GATE and elapsed <= RUNTIME_BUDGET_S
    table = ", ".join(f"{s}+{c} {v:.2f}%" for (s, c), v in der.items())
    for name, holds in (
        ("Bi-LSTM+AHC <= Bi-LSTM+SC", ba <= der[("bilstm", "sc")]),
        ("Bi-LSTM+AHC <= PLDA+AHC", ba <= der[("plda", "ahc")]),
    ):
        print(f"  ordering {name}: {'yes' if holds else 'no'} (reported only)")
    assert verdict(8, f"Bi-LSTM+AHC DER <= {DER_GATE:.0f}% in <= 15 min", ok, f"{table}; {elapsed / 60:.1f} min")


@pytest.mark.slow
def test_9_determinism(bundled_run, tmp_path, verdict):
    out1, code1, _ = bundled_run
    out2 = tmp_path / "run2"
    code2 = main(["run-all", "--out", str(out2)])
    files = sorted(p.name for p in (out1 / "results").glob("der_*.csv"))
    same = [(out1 / "results" / f).read_bytes() == (out2 / "results" / f).read_bytes() for f in files]
    ok = code1 == 0 and code2 == 0 and len(files) == 4 and all(same)
    assert verdict(9, "two seeded full runs give byte-identical DER CSVs", ok, f"{sum(same)}/{len(files)} files identical")
