import numpy as np
import pytest

from diffexc.core import RngSeed
from diffexc.drift import (DriftSpec, ParamVector, delta_gradient, drift_vjp,
                           eval_drift, init_params, param_count)

ALL_TRAINABLE = [
    DriftSpec("linear"),
    DriftSpec("mlp", width=8, depth=3),
    DriftSpec("mlp", width=6, depth=2, activation="leaky-relu",
              posenc=(1.0, 2.5), time_input=True),
    DriftSpec("kernel", base=DriftSpec("ou"), eta=0.7, source="history"),
    DriftSpec("kernel", base=DriftSpec("linear"), eta=1.3, source="exogenous"),
    DriftSpec("hawkes2"),
]


def test_linear_eval():
    assert eval_drift(DriftSpec("linear"), [-1.0], 2.0) == -2.0


def test_fixed_families():
    x = np.array([0.5, -1.2, 2.0])
    assert np.allclose(eval_drift(DriftSpec("cubic"), [], x), -x ** 3)
    assert np.allclose(eval_drift(DriftSpec("tanh"), [], x), -np.tanh(x))
    assert np.allclose(eval_drift(DriftSpec("ou"), [], x), -x)


def test_circle_family_value():
    out = eval_drift(DriftSpec("circle", input_dim=2), [], np.array([1.0, 0.0]))
    assert np.allclose(out, [-1.0, 5.0])


def test_kernel_family_value():
    spec = DriftSpec("kernel", base=DriftSpec("ou"), eta=1.0, source="history")
    # S_t = t - 1 via a single event one unit in the past
    v = eval_drift(spec, [1.0], 0.0, t=5.0, events=np.array([4.0]))
    assert v == pytest.approx(np.exp(-1.0), abs=1e-12)
    # before any event the kernel term is 0
    v0 = eval_drift(spec, [1.0], 0.0, t=5.0, events=np.array([]))
    assert v0 == 0.0


def test_kernel_jump_at_event():
    spec = DriftSpec("kernel", base=DriftSpec("ou"), eta=0.5, source="history")
    w = 0.8
    ev = np.array([10.0, 60.0])  # second event 100 eta after the first
    before = eval_drift(spec, [w], 0.0, t=60.0 - 1e-9, events=ev)
    after = eval_drift(spec, [w], 0.0, t=60.0, events=ev)
    assert after - before == pytest.approx(w, abs=1e-12)


def test_eval_is_pure():
    spec = DriftSpec("mlp", width=4, depth=2)
    p = init_params(spec, RngSeed(1))
    x = np.linspace(-1, 1, 7)
    a = eval_drift(spec, p, x, 0.3)
    b = eval_drift(spec, p, x, 0.3)
    assert np.array_equal(a, b)


def test_param_counts():
    assert param_count(DriftSpec("linear")) == 1
    assert param_count(DriftSpec("cubic")) == 0
    assert param_count(DriftSpec("hawkes2")) == 1
    assert param_count(DriftSpec("kernel", base=DriftSpec("ou"))) == 1
    assert param_count(DriftSpec("kernel", base=DriftSpec("linear"))) == 2
    # width 64, depth 6, two input features (state + time), one output:
    # 2->64, 64->64 x5, 64->1, plus biases
    big = DriftSpec("mlp", width=64, depth=6, time_input=True)
    assert param_count(big) == (2 * 64 + 64) + 5 * (64 * 64 + 64) + (64 + 1)
    assert param_count(big) == 21057


def test_posenc_param_count_derivable():
    spec = DriftSpec("mlp", width=8, depth=2, posenc=(1.0, 3.0), time_input=True)
    # base feats = 2, posenc adds 2*2 per frequency -> 10 inputs
    expected = (10 * 8 + 8) + (8 * 8 + 8) + (8 + 1)
    assert param_count(spec) == expected
    p = init_params(spec, RngSeed(2))
    assert len(p) == expected


def test_init_deterministic():
    spec = DriftSpec("mlp", width=8, depth=3)
    a = init_params(spec, RngSeed(5))
    b = init_params(spec, RngSeed(5))
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, init_params(spec, RngSeed(6)).values)


def test_fixed_family_empty_params():
    assert len(init_params(DriftSpec("cubic"), RngSeed(0))) == 0


def test_scalar_init_range():
    vals = [init_params(DriftSpec("linear"), RngSeed(s)).values[0] for s in range(50)]
    assert all(-0.1 <= v <= 0.1 for v in vals)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        eval_drift(DriftSpec("circle", input_dim=2), [], np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        eval_drift(DriftSpec("linear"), [1.0, 2.0], 1.0)


@pytest.mark.parametrize("spec", ALL_TRAINABLE, ids=lambda s: s.family + s.activation)
def test_vjp_matches_finite_differences(spec):
    # cot . dmu/dtheta versus central differences of f = sum(cot * mu),
    # 20 random coordinates, relative tolerance 1e-5
    gen = RngSeed(7).generator()
    n = param_count(spec)
    params = init_params(spec, RngSeed(8)).values + 0.05 * gen.standard_normal(n)
    N = 40
    x = gen.standard_normal(N)
    t = np.abs(gen.standard_normal(N)) * 3.0 + 5.0
    cot = gen.standard_normal(N)
    events = np.array([1.0, 2.5, 4.9])

    def f(v):
        return float(np.sum(cot * eval_drift(spec, v, x, t, events=events)))

    g = drift_vjp(spec, params, x, t, cot, events=events)
    h = 1e-5
    idx = gen.choice(n, size=min(20, n), replace=False)
    for i in idx:
        e = np.zeros(n)
        e[i] = h
        fd = (f(params + e) - f(params - e)) / (2 * h)
        denom = max(abs(fd), abs(g[i]), 1e-8)
        assert abs(g[i] - fd) / denom < 1e-5, f"param {i}: {g[i]} vs {fd}"


def test_vjp_fixed_family_empty():
    g = drift_vjp(DriftSpec("cubic"), [], np.array([1.0]), 0.0, np.array([2.0]))
    assert g.size == 0


def test_delta_gradient_closed_form():
    # stationary when tau = 4 delta^2
    assert delta_gradient(0.5, [1.0]) == pytest.approx(0.0, abs=1e-14)
    assert delta_gradient(1.0, [1.0]) == pytest.approx(-3.0)
    gen = RngSeed(9).generator()
    taus = gen.exponential(size=30) + 0.01
    d = 0.37
    expect = np.sum(1.0 / d - 4.0 * d / taus)
    assert delta_gradient(d, taus) == pytest.approx(expect, abs=1e-10)
    with pytest.raises(ValueError):
        delta_gradient(0.0, [1.0])


def test_spec_serialization_roundtrip():
    for spec in ALL_TRAINABLE:
        if spec.family == "hawkes2":
            continue
        back = DriftSpec.from_dict(spec.to_dict())
        assert back == spec


def test_spec_validation():
    with pytest.raises(ValueError):
        DriftSpec("nope")
    with pytest.raises(ValueError):
        DriftSpec("circle", input_dim=3)
    with pytest.raises(ValueError):
        DriftSpec("kernel")  # missing base
    with pytest.raises(ValueError):
        DriftSpec("kernel", base=DriftSpec("ou"), eta=0.0)
    with pytest.raises(ValueError):
        DriftSpec("mlp", activation="relu6")


def test_param_vector_validation():
    with pytest.raises(ValueError):
        ParamVector([np.nan])
    pv = ParamVector([1.0, 2.0])
    assert len(pv) == 2
