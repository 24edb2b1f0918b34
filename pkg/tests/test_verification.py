import numpy as np

from klap import verification as V
from klap.solver import _renorm


def test_mutated_update_fails_fixed_point():
    def drop_factor(h, lam, nu):
        # p_next = m + lam/(1+lam) h, renormalised: the 1/(1+lam) weight on m is gone
        def step(m, p):
            if lam == 0:
                return m
            return _renorm(m + (lam / (1.0 + lam)) * h.weights)
        return step

    bad = V.check_fixed_point(6, step=drop_factor, max_iterations=2000)
    assert not bad.passed
    good = V.check_fixed_point(6)
    assert good.passed


def test_descent_violations_counts():
    class T:
        records = []

        def column(self, name):
            return np.array([1.0, 0.5, 0.6, 0.4])
    assert V.descent_violations(T(), 0.5) == 1


def test_rate_bound_violations_counts():
    class T:
        def column(self, name):
            return np.array([9.0, 1.0, 0.3, 0.2])
    # k = 0 is skipped; running minima 1, 0.3, 0.2 against kl0 / K
    assert V.rate_bound_violations(T(), 1.0, 1.0) == 0
    assert V.rate_bound_violations(T(), 1.0, 0.5) == 3
    assert V.rate_bound_violations(T(), 0.5, 0.5) == 0


def test_each_check_passes():
    for check in (V.check_monotone_descent, V.check_rate_bound, V.check_uniqueness,
                  V.check_small_lambda_limit, V.check_bayes_consistency):
        r = check()
        assert r.passed, r.line()


def test_sampling_check():
    r = V.check_sampling_consistency()
    assert r.passed, r.line()


def test_report_csv_shape():
    rs = [V.CheckResult("a", True, "x=1"), V.CheckResult("b", False, "y=2")]
    assert V.report_csv(rs) == "property,passed,detail\na,true,x=1\nb,false,y=2\n"
    assert rs[1].line() == "FAIL b: y=2"


def test_scales_defined():
    assert set(V.SCALES) == {"quick", "full"}
    assert V.SCALES["full"]["sampling"] and not V.SCALES["quick"]["sampling"]
