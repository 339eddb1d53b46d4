import itertools
import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxdg.datagen import counterexample_dgp
from ctxdg.errors import CapacityError, RejectedInputError, VerificationFailedError
from ctxdg.infotheory import (BUILTINS, DiscreteDGP, Joint, builtin_dgp, cond_mutual_information,
                              count_vectors, criterion_status, entropy, lift_context, lift_ordered,
                              mutual_information, n_count_vectors, random_dgp,
                              random_recoverable_dgp, to_bits, verify_counterexample,
                              verify_noisy_recovery, verify_sum_mi_inequality, verify_theorem)

LN2 = math.log(2)


def oracle_cmi(joint, A, B, C):
    """I(A;B|C) by summing over outcomes held in dictionaries."""
    axes = {n: i for i, n in enumerate(joint.names)}
    pabc, pac, pbc, pc = (defaultdict(float) for _ in range(4))
    for idx in zip(*np.nonzero(joint.p)):
        p = joint.p[idx]
        a = tuple(idx[axes[n]] for n in A)
        b = tuple(idx[axes[n]] for n in B)
        c = tuple(idx[axes[n]] for n in C)
        pabc[a, b, c] += p
        pac[a, c] += p
        pbc[b, c] += p
        pc[c] += p
    return sum(p * math.log(p * pc[c] / (pac[a, c] * pbc[b, c]))
               for (a, b, c), p in pabc.items() if p > 0)


def bits_joint(p):
    """Joint over two binary variables A, B."""
    return Joint(np.asarray(p, dtype=float), ("A", "B"), {"A": [0, 1], "B": [0, 1]})


class TestMeasures:
    def test_independent_bits(self):
        assert abs(mutual_information(bits_joint([[0.25, 0.25], [0.25, 0.25]]), "A", "B")) <= 1e-12

    def test_identical_bits(self):
        assert mutual_information(bits_joint([[0.5, 0], [0, 0.5]]), "A", "B") == pytest.approx(LN2, abs=1e-12)

    def test_label_equals_env(self):
        d = builtin_dgp("label-equals-env")
        val = cond_mutual_information(d.base_joint(), "Y", "E", "X")
        h = -(0.75 * math.log(0.75) + 0.25 * math.log(0.25))
        assert val == pytest.approx(h, abs=1e-12)
        assert val == pytest.approx(0.5623, abs=1e-4)
        assert to_bits(val) == pytest.approx(0.8113, abs=1e-4)

    def test_overlap_rejected(self):
        with pytest.raises(RejectedInputError):
            cond_mutual_information(builtin_dgp("bijective").base_joint(), "X", ["X", "Y"], "E")

    def test_unknown_axis(self):
        with pytest.raises(RejectedInputError):
            entropy(bits_joint([[1, 0], [0, 0]]), "Q")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_against_oracle(self, seed):
        d = random_dgp(np.random.default_rng(seed))
        J = lift_context(d, 2)
        for A, B, C in [("Y", "S", "X"), ("E", "S", "X"), ("Y", "E", "X"), ("Y", "X", ())]:
            ours = cond_mutual_information(J, A, B, list(C) if C else None)
            ref = oracle_cmi(J, [A], [B], [C] if isinstance(C, str) else list(C))
            assert abs(ours - ref) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_symmetric_nonnegative(self, seed):
        J = lift_context(random_dgp(np.random.default_rng(seed)), 2)
        a = cond_mutual_information(J, "Y", "S", "X")
        b = cond_mutual_information(J, "S", "Y", "X")
        assert abs(a - b) <= 1e-12 and a >= -1e-12

    @pytest.mark.parametrize("value,status", [(1e-3, "satisfied"), (1e-12, "violated"),
                                              (1e-8, "indeterminate"), (-1e-14, "violated")])
    def test_bands(self, value, status):
        assert criterion_status(value) == status


class TestLift:
    def test_stars_and_bars(self):
        assert n_count_vectors(2, 3) == 6
        assert len(count_vectors(2, 3)) == 6
        assert all(sum(c) == 2 for c in count_vectors(2, 3))

    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_normalized_and_marginal(self, n):
        d = random_dgp(np.random.default_rng(n))
        J = lift_context(d, n)
        assert abs(J.total() - 1) <= 1e-10
        assert np.max(np.abs(J.marginal(["E", "X", "Y"]).p - d.base_joint().p)) <= 1e-12

    def test_capacity_guard(self):
        d = random_dgp(np.random.default_rng(0), n_x=10)
        with pytest.raises(CapacityError) as info:
            lift_context(d, 30)
        assert info.value.cardinality == math.comb(39, 9)

    def test_single_draw_is_fresh_x(self):
        d = random_dgp(np.random.default_rng(3))
        J = lift_context(d, 1)
        # with n = 1 the count vector is the one-hot of X'
        p = d.p_E[:, None, None, None] * d.p_X_given_E[:, :, None, None] \
            * d.p_Y_given_XE[:, :, :, None] * d.p_X_given_E[:, None, None, :]
        ref = Joint(p, ("E", "X", "Y", "S"))
        assert cond_mutual_information(J, "Y", "S", "X") == pytest.approx(
            cond_mutual_information(ref, "Y", "S", "X"), abs=1e-14)

    @pytest.mark.parametrize("n", [1, 2, 3])
    @pytest.mark.parametrize("seed", range(5))
    def test_count_vector_sufficiency(self, n, seed):
        d = random_dgp(np.random.default_rng(seed), n_x=2)
        a, b = lift_context(d, n), lift_ordered(d, n)
        for A, B in (("Y", "S"), ("E", "S")):
            assert abs(cond_mutual_information(a, A, B, "X")
                       - cond_mutual_information(b, A, B, "X")) <= 1e-12

    def test_n_positive(self):
        with pytest.raises(RejectedInputError):
            lift_context(builtin_dgp("bijective"), 0)


class TestTheorem:
    def test_bijective(self):
        r = verify_theorem(builtin_dgp("bijective"), 2)
        assert abs(r.I_ES_given_X) <= 1e-12 and abs(r.I_SY_given_X) <= 1e-12
        assert r.ok

    def test_covariate_shift(self):
        r = verify_theorem(builtin_dgp("covariate-shift"), 3)
        assert abs(r.I_YE_given_X) <= 1e-12 and abs(r.I_SY_given_X) <= 1e-12
        assert r.checks["b"]["applicable"] and r.ok

    def test_recoverable_case_c(self):
        r = verify_theorem(random_recoverable_dgp(np.random.default_rng(0)), 20)
        assert r.H_E_given_S <= 1e-9 and r.I_YE_given_X > 0.01
        assert r.I_SY_given_X > 1e-6 and r.checks["c"]["applicable"]

    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_fuzzed_implications(self, n):
        rng = np.random.default_rng(100 + n)
        for _ in range(100):
            r = verify_theorem(random_dgp(rng), n)
            assert r.ok, r.checks
            assert min(r.I_SY_given_X, r.I_ES_given_X, r.I_YE_given_X, r.I_YX) >= -1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_monotone_in_n(self, seed):
        d = random_dgp(np.random.default_rng(seed))
        vals = [verify_theorem(d, n).I_ES_given_X for n in (1, 2, 4)]
        assert vals[0] <= vals[1] + 1e-12 and vals[1] <= vals[2] + 1e-12

    def test_report_serializes(self):
        doc = verify_theorem(builtin_dgp("label-equals-env"), 1).to_dict()
        assert doc["bits"]["I_YE_given_X"] == pytest.approx(0.811278, abs=1e-6)
        assert doc["ok"] is True


class TestCounterexample:
    @pytest.mark.parametrize("n", [1, 2, 4])
    def test_passes(self, n):
        rep = verify_counterexample(counterexample_dgp(), n)
        assert rep["I_SY_given_X"] <= 1e-9
        assert rep["I_ES_given_X"] >= 0.01 and rep["I_YE_given_X"] >= 0.01

    def test_disjoint_variant(self):
        J = lift_context(builtin_dgp("counterexample-disjoint"), 4)
        assert abs(cond_mutual_information(J, "E", "S", "X")) <= 1e-12

    def test_failure_carries_values(self):
        with pytest.raises(VerificationFailedError) as info:
            verify_counterexample(builtin_dgp("label-equals-env"), 2)
        assert "I_SY_given_X" in info.value.values


class TestNoisyRecovery:
    def test_exact_g(self):
        rep = verify_noisy_recovery(builtin_dgp("bijective"), lambda s: int(np.argmax(s)), 2)
        assert rep["status"] == "passed"
        assert abs(rep["I_ZY_given_X"]) <= 1e-12

    def test_constant_g(self):
        rep = verify_noisy_recovery(builtin_dgp("label-equals-env"), lambda s: 0, 3)
        assert rep["status"] == "hypotheses not satisfied"

    def test_fuzz_never_fails(self):
        rng = np.random.default_rng(5)
        statuses = []
        for _ in range(30):
            d = random_recoverable_dgp(rng, n_e=2, n_shared=1)
            statuses.append(verify_noisy_recovery(d, lambda s: 0 if s[0] >= s[1] else 1, 4)["status"])
        assert "failed" not in statuses


class TestSumMI:
    def fair_sum_joint(self):
        p = np.zeros((2, 2, 2))
        for a, b in itertools.product((0, 1), repeat=2):
            p[a, b, a] = 0.25
        return Joint(p, ("A", "B", "C"), {"A": [0, 1], "B": [0, 1], "C": [0, 1]})

    def test_worked_example(self):
        J = self.fair_sum_joint()
        S = J.derive("A+B", lambda a, b: a + b, ["A", "B"])
        lhs = mutual_information(S, "A+B", "C")
        # H(A+B) = 1.5 bits and H(A+B | A) = 1 bit
        assert lhs == pytest.approx(0.5 * LN2, abs=1e-12)
        assert mutual_information(S, "A", "C") == pytest.approx(LN2, abs=1e-12)
        assert verify_sum_mi_inequality(J)

    def test_independent_c(self):
        p = np.full((2, 3, 2), 1 / 12)
        assert verify_sum_mi_inequality(Joint(p, ("A", "B", "C"),
                                              {"A": [0, 1], "B": [0, 1, 2], "C": [0, 1]}))

    def test_dependence_rejected(self):
        p = np.zeros((2, 2, 1))
        p[0, 0, 0] = p[1, 1, 0] = 0.5
        with pytest.raises(RejectedInputError):
            verify_sum_mi_inequality(Joint(p, ("A", "B", "C"), {"A": [0, 1], "B": [0, 1], "C": [0]}))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_random_product_joints(self, seed):
        # p(a) p(b) p(c | a, b) keeps A and B independent; drawing c from p(c|a) or
        # p(c|b) alone keeps them independent given C as well
        rng = np.random.default_rng(seed)
        na, nb, nc = rng.integers(2, 4, 3)
        pa, pb = rng.dirichlet(np.ones(na)), rng.dirichlet(np.ones(nb))
        if rng.random() < 0.5:
            pc = rng.dirichlet(np.ones(nc), na)[:, None, :].repeat(nb, axis=1)
        else:
            pc = rng.dirichlet(np.ones(nc), nb)[None, :, :].repeat(na, axis=0)
        p = pa[:, None, None] * pb[None, :, None] * pc
        J = Joint(p, ("A", "B", "C"), {"A": list(range(na)), "B": list(range(nb)),
                                        "C": list(range(nc))})
        assert verify_sum_mi_inequality(J)


class TestDGP:
    def test_row_sums_checked(self):
        with pytest.raises(RejectedInputError):
            DiscreteDGP([0], [0, 1], [0], [1.0], [[0.5, 0.6]], [[[1.0], [1.0]]])

    @pytest.mark.parametrize("name", BUILTINS)
    def test_builtins_round_trip(self, name):
        d = builtin_dgp(name)
        back = DiscreteDGP.from_dict(d.to_dict())
        assert np.array_equal(back.p_Y_given_XE, d.p_Y_given_XE)
