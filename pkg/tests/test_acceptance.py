"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline.
Statistical criteria use fixed seeds, so outcomes are reproducible bit for bit.
"""

from __future__ import annotations

import json
import math
import time
from contextlib import contextmanager

import numpy as np

from privtab.cli import EXIT_BUDGET, EXIT_OK, main
from privtab.fidelity import build_report, chi2_categorical, ks_two_sample
from privtab.mechanisms import (
    PrivacyParams,
    ScoredCandidate,
    exponential_mechanism,
    gaussian_sigma,
    randomized_response,
)
from privtab.pii import (
    FauxMapping,
    PiiEntity,
    PiiKind,
    generate_faux,
    preassign,
    transform_cell,
)
from privtab.rng import (
    RandomSource,
    sample_cauchy,
    sample_gaussian,
    sample_laplace,
    sample_two_sided_geometric,
)
from privtab.table import load_csv
from privtab.transforms import (
    BinningScheme,
    ClipBounds,
    clip,
    load_mask_rules,
    mask,
    scale_by_factors,
)

N = 10**6


@contextmanager
def criterion(number: int, description: str):
    started = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number:02d} FAIL  {description}")
        raise
    print(f"ACCEPTANCE {number:02d} PASS  {description} [{time.perf_counter() - started:.2f}s]")


def tsg_pmf(k: int, eps: float) -> float:
    q = math.exp(-eps)
    return (1.0 - q) / (1.0 + q) * q ** abs(k)


def test_criterion_01_golden_table_reproduction():
    with criterion(1, "golden tables: scaling, masking, binning (< 1 s)"):
        started = time.perf_counter()

        assert scale_by_factors([1000.0, 2000.0], [1.2, 0.8]) == [1200.0, 1600.0]

        rules = load_mask_rules()
        phone, _ = mask(["555.192.9277"], rules["phone"])
        card, _ = mask(["5423 3428 2372 9072"], rules["credit_card"])
        street, _ = mask(["123 Any Street, Canada City, Canada"], rules["street_number"])
        assert phone[0] == "555.XXX.XXXX"
        assert card[0] == "5XX3 XXXX XXXX 9072"
        assert street[0] == "XXX Any Street, Canada City, Canada"

        credit = BinningScheme(
            edges=(300, 580, 670, 740, 800, 850),
            labels=("Poor", "Fair", "Good", "Very Good", "Excellent"),
        )
        assert credit.assign(669.0) == "Fair"
        assert credit.assign(671.0) == "Good"
        decades = BinningScheme(edges=(20, 30, 40), labels=("20-29", "30-39"))
        assert decades.assign(29.0) == "20-29"
        assert decades.assign(31.0) == "30-39"

        assert time.perf_counter() - started < 1.0


def test_criterion_02_geometric_mechanism_correctness():
    with criterion(2, "geometric mechanism: pmf normalization, frequencies, DP ratio (< 30 s)"):
        started = time.perf_counter()
        for eps in (0.1, 0.5, 1.0, 2.0):
            q = math.exp(-eps)
            c = (1.0 - q) / (1.0 + q)
            partial = sum(tsg_pmf(k, eps) for k in range(-300, 301))
            tail = 2.0 * c * q**301 / (1.0 - q)
            assert abs(partial + tail - 1.0) < 1e-9

            draws = sample_two_sided_geometric(RandomSource(101, int(eps * 1000)), eps, N)
            for k in range(-10, 11):
                p = tsg_pmf(k, eps)
                se = math.sqrt(p * (1.0 - p) / N)
                assert abs(float(np.mean(draws == k)) - p) <= 3.0 * se

            for r in range(-40, 41):
                ratio = tsg_pmf(r, eps) / tsg_pmf(r - 1, eps)
                assert ratio <= math.exp(eps) + 1e-9
        assert time.perf_counter() - started < 30.0


def test_criterion_03_gaussian_calibration():
    with criterion(3, "gaussian sigma for (1, 1, 1e-5) matches formula oracle within 1e-3"):
        # oracle: independent direct evaluation of the calibration formula
        oracle = 1.0 * math.sqrt(2.0 * math.log(1.25 / 1e-5)) / 1.0
        sigma = gaussian_sigma(PrivacyParams(epsilon=1.0, delta=1e-5, sensitivity=1.0))
        assert abs(sigma - oracle) < 1e-12
        assert abs(sigma - 4.8448) < 1e-3


def test_criterion_04_exponential_mechanism_frequencies():
    with criterion(4, "exponential mechanism: 1e6-draw frequencies within 1% of oracle"):
        # oracle: normalized exponential weights at exponent eps/(2*dq) = 1
        expected = (1.0 / (1.0 + math.e), math.e / (1.0 + math.e))
        assert abs(expected[0] - 0.2689) < 5e-4 and abs(expected[1] - 0.7311) < 5e-4

        params = PrivacyParams(epsilon=2.0, sensitivity=1.0)
        cands = [ScoredCandidate("low", 0.0), ScoredCandidate("high", 1.0)]
        src = RandomSource(202, 1)
        hits = sum(1 for _ in range(N) if exponential_mechanism(cands, params, src).value == "high")
        assert abs(hits / N - expected[1]) < 0.01
        assert abs((N - hits) / N - expected[0]) < 0.01

        uniform_cands = [ScoredCandidate(i, 2.5) for i in range(4)]
        counts = np.zeros(4)
        src = RandomSource(202, 2)
        for _ in range(N):
            counts[exponential_mechanism(uniform_cands, params, src).value] += 1
        assert np.all(np.abs(counts / N - 0.25) < 0.01)


def test_criterion_05_randomized_response():
    with criterion(5, "randomized response estimator accuracy and unbiasedness (< 60 s)"):
        started = time.perf_counter()
        answers = np.arange(N) < int(0.30 * N)
        result = randomized_response(answers, 0.75, RandomSource(303, 0))
        assert abs(result.estimate - 0.30) < 0.01

        trials = 200
        per_trial = 10**4
        estimates = []
        for t in range(trials):
            trial_answers = np.arange(per_trial) < int(0.30 * per_trial)
            estimates.append(
                randomized_response(trial_answers, 0.75, RandomSource(303, t + 1)).raw_estimate
            )
        estimates = np.asarray(estimates)
        se = estimates.std(ddof=1) / math.sqrt(trials)
        assert abs(estimates.mean() - 0.30) <= 3.0 * se
        assert time.perf_counter() - started < 60.0


def test_criterion_06_sampler_moments():
    with criterion(6, "sampler moments: laplace 2b^2, gaussian sigma^2, cauchy median/IQR"):
        for i, b in enumerate((0.1, 1.0, 2.0)):
            x = sample_laplace(RandomSource(404, i), 0.0, b, N)
            assert abs(x.var() / (2.0 * b * b) - 1.0) < 0.02

        g = sample_gaussian(RandomSource(404, 10), 0.0, 0.1, N)
        assert abs(g.var() / 0.01 - 1.0) < 0.02

        cauchy = sample_cauchy(RandomSource(404, 11), 0.0, 0.1, N)
        assert abs(float(np.median(cauchy))) < 0.002
        q1, q3 = np.quantile(cauchy, [0.25, 0.75])
        assert abs((q3 - q1) / 0.2 - 1.0) < 0.02


def test_criterion_07_clipping_tail_mass():
    with criterion(7, "mean +/- 3 sigma clipping clips 0.0027 +/- 0.001 of a standard normal"):
        # oracle: two-sided normal tail mass beyond 3 sigma
        expected = math.erfc(3.0 / math.sqrt(2.0))
        values = list(RandomSource(505, 0).standard_normal(10**5))
        _, report = clip(values, ClipBounds.mean_pm_3sigma())
        fraction = (report.low + report.high) / len(values)
        assert abs(fraction - expected) <= 0.001


def test_criterion_08_fidelity_metrics():
    with criterion(8, "fidelity: ks self-zero, hand ks = 1/3, hand chi2 = 50, identity report"):
        sample = list(RandomSource(606, 0).standard_normal(512))
        assert ks_two_sample(sample, sample) == 0.0

        stat = ks_two_sample([1.0, 2.0, 3.0], [1.0, 2.0, 4.0])
        assert abs(stat - 1.0 / 3.0) < 1e-15

        chi2, dof = chi2_categorical(["X"] * 100 + ["Y"] * 100, ["X"] * 150 + ["Y"] * 50)
        assert chi2 == 50.0 and dof == 1

        import io

        from privtab.pipeline import PipelineConfig, execute

        table = load_csv(io.StringIO("a,b,label\n1,10,x\n2,20,y\n3,30,x\n4,40,y\n"))
        processed, manifest, _ = execute(PipelineConfig.from_dict({"version": 1, "seed": 9}), table)
        assert manifest.output_digest == manifest.input_digest
        report = build_report(table, processed)
        for stats in report.numeric.values():
            assert stats.ks_statistic == 0.0
            assert stats.mean_delta == 0.0
            assert stats.variance_ratio == 1.0
            assert stats.min_delta == 0.0 and stats.max_delta == 0.0
        assert report.text["label"].information_loss == 0.0
        assert report.correlation_delta == 0.0


def test_criterion_09_pii_properties():
    with criterion(9, "pii: 1e4 luhn-valid cards, 1e4 phone signatures, join cardinality"):
        # independent luhn oracle (table-driven, left-to-right)
        doubled = (0, 2, 4, 6, 8, 1, 3, 5, 7, 9)

        def luhn_oracle(digits: str) -> bool:
            parity = len(digits) % 2
            total = sum(
                doubled[int(ch)] if i % 2 == parity else int(ch)
                for i, ch in enumerate(digits)
            )
            return total % 10 == 0

        pick = RandomSource(707, 0)
        mapping = FauxMapping.from_secret("acceptance-nine")
        for i in range(10**4):
            digits = "".join(str(int(d)) for d in pick.integers(0, 10, 16))
            surface = " ".join(digits[j:j + 4] for j in range(0, 16, 4))
            faux = generate_faux(
                PiiEntity(PiiKind.CREDIT_CARD, 0, len(surface), surface), mapping
            )
            assert luhn_oracle(faux.replace(" ", ""))

        for i in range(10**4):
            d = [str(int(x)) for x in pick.integers(0, 10, 10)]
            d[0] = str(int(pick.integers(2, 10, 1)[0]))
            surface = f"{d[0]}{d[1]}{d[2]}.{d[3]}{d[4]}{d[5]}.{d[6]}{d[7]}{d[8]}{d[9]}"
            faux = generate_faux(PiiEntity(PiiKind.PHONE, 0, len(surface), surface), mapping)
            assert len(faux) == len(surface)
            for o, f in zip(surface, faux):
                assert o.isdigit() == f.isdigit()
                if not o.isdigit():
                    assert o == f

        from privtab.pii import default_name_lists

        first, last = default_name_lists()
        pool = [
            f"{first[int(i)].capitalize()} {last[int(j)].capitalize()}"
            for i, j in zip(pick.integers(0, 80, 250), pick.integers(0, 80, 250))
        ]
        col_a = [pool[int(i)] for i in pick.integers(0, len(pool), 1000)]
        col_b = [pool[int(i)] for i in pick.integers(0, len(pool), 1000)]
        join_mapping = FauxMapping.from_secret("acceptance-join")
        preassign(join_mapping, [col_a, col_b])
        faux_a = [transform_cell(c, join_mapping)[0] for c in col_a]
        faux_b = [transform_cell(c, join_mapping)[0] for c in col_b]

        from collections import Counter

        def join_cardinality(left, right):
            counts = Counter(right)
            return sum(counts[v] for v in left)

        assert join_cardinality(faux_a, faux_b) == join_cardinality(col_a, col_b)


PERTURB_CONFIG = {
    "version": 1,
    "seed": 424242,
    "budget": {"epsilon": 3.0, "delta": 1e-5},
    "columns": {
        "income": [
            {"technique": "clip", "derivation": "mean_pm_3sigma"},
            {"technique": "multiplicative", "lo": 0.8, "hi": 1.2},
        ],
        "credit_score": [{"technique": "dp_laplace", "sensitivity": 1.0, "epsilon": 1.0}],
        "account_balance": [
            {"technique": "dp_gaussian", "sensitivity": 1.0, "epsilon": 1.0, "delta": 1e-5}
        ],
        "age": [
            {
                "technique": "bin",
                "edges": [18, 30, 45, 60, 75, 91],
                "labels": ["18-29", "30-44", "45-59", "60-74", "75+"],
            }
        ],
        "tenure_years": [{"technique": "additive_noise", "family": "laplace", "scale": 0.1}],
        "full_name": [{"technique": "pii", "mode": "consistent"}],
        "phone": [{"technique": "pii", "mode": "consistent"}],
        "email": [{"technique": "pii", "mode": "consistent"}],
    },
    "thresholds": {"credit_score": 720},
}


def test_criterion_10_end_to_end_determinism(sample_csv, tmp_path, monkeypatch):
    with criterion(10, "end-to-end: bit-identical across runs and worker counts; budget exit 3"):
        monkeypatch.setenv("PRIVTAB_PII_KEY", "acceptance-ten-key")
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(PERTURB_CONFIG), encoding="utf-8")

        outputs = []
        for name, workers in (("run1.csv", 1), ("run2.csv", 1), ("run_n.csv", 4)):
            code = main(
                [
                    "perturb",
                    "--config", str(config_path),
                    "--input", str(sample_csv),
                    "--output", str(tmp_path / name),
                    "--workers", str(workers),
                ]
            )
            assert code == EXIT_OK
            outputs.append((tmp_path / name).read_bytes())
        assert outputs[0] == outputs[1], "two identical runs must be bit-identical"
        assert outputs[0] == outputs[2], "worker count must not change output bytes"

        over_budget = dict(PERTURB_CONFIG, budget={"epsilon": 1.5, "delta": 1e-5})
        over_path = tmp_path / "over.json"
        over_path.write_text(json.dumps(over_budget), encoding="utf-8")
        code = main(
            [
                "perturb",
                "--config", str(over_path),
                "--input", str(sample_csv),
                "--output", str(tmp_path / "refused.csv"),
            ]
        )
        assert code == EXIT_BUDGET
        assert not (tmp_path / "refused.csv").exists()
