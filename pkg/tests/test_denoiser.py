import numpy as np
import pytest

from awdiff.denoiser import (
    AdamState,
    ArchitectureConfig,
    DenoiserParams,
    adam_step,
    attention_context,
    backward,
    count_params,
    forward,
    init_params,
    time_embedding,
)
from awdiff.errors import DivergenceError, InvariantError, ParameterError
from awdiff.image import make_rng
from awdiff.wavelet import starlet_decompose
from oracles import central_differences, relative_error

TINY = ArchitectureConfig(channels=2, emb_dim=4, scales=2)


@pytest.fixture
def tiny_inputs(rng):
    f = starlet_decompose(rng.random((8, 8)), 2)
    return rng.standard_normal((8, 8)), 7, rng.standard_normal(4), f


def test_param_counts():
    # stem 16*5*9+16, time 32*16+16, fusion 16*16+18*16+18*16, 2 blocks of 2*(16*16*9+16), head 16*9+1
    assert count_params(ArchitectureConfig()) == 11521
    assert count_params(TINY) == 337


def test_init_statistics():
    arch = ArchitectureConfig(channels=32)
    p = init_params(arch, make_rng(0))
    for name, block in p.blocks.items():
        if name.endswith((".b", ".b1", ".b2")):
            assert np.all(block == 0)
    w = p.blocks["block0.w1"]
    assert abs(w.std() / np.sqrt(2 / (32 * 9)) - 1) < 0.05
    wk = p.blocks["fuse.wk"]
    assert abs(wk.std() / np.sqrt(1 / 16) - 1) < 0.2


def test_zero_params_give_zero_output(tiny_inputs):
    p = init_params(TINY, make_rng(0)).zeros_like()
    np.testing.assert_array_equal(forward(p, *tiny_inputs), 0.0)


def test_output_shape_and_determinism(tiny_inputs):
    p = init_params(TINY, make_rng(0))
    a = forward(p, *tiny_inputs)
    assert a.shape == (8, 8)
    np.testing.assert_array_equal(a, forward(p, *tiny_inputs))


def test_output_depends_on_embedding(tiny_inputs):
    p = init_params(TINY, make_rng(0))
    x, t, z, f = tiny_inputs
    assert np.max(np.abs(forward(p, x, t, z, f) - forward(p, x, t, -z, f))) > 1e-8


def test_output_depends_on_step(tiny_inputs):
    p = init_params(TINY, make_rng(0))
    x, _, z, f = tiny_inputs
    assert np.max(np.abs(forward(p, x, 3, z, f) - forward(p, x, 90, z, f))) > 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_backward_matches_finite_differences(tiny_inputs, seed):
    p = init_params(TINY, make_rng(seed))
    upstream = make_rng(100 + seed).standard_normal((8, 8))
    analytic = backward(p, *tiny_inputs, upstream).flat()

    def scalar(vec):
        return float(np.sum(forward(p.with_flat(vec), *tiny_inputs) * upstream))

    numeric = central_differences(scalar, p.flat())
    # exact-zero analytic entries see ~1e-10 of rounding noise from the differences
    assert relative_error(analytic, numeric, floor=1e-4).max() < 1e-5


def test_zero_embedding_entry_kills_its_rows(tiny_inputs):
    x, t, z, f = tiny_inputs
    z = z.copy()
    z[1] = 0.0
    g = backward(init_params(TINY, make_rng(0)), x, t, z, f, np.ones((8, 8)))
    np.testing.assert_array_equal(g.blocks["fuse.wk"][1], 0.0)
    np.testing.assert_array_equal(g.blocks["fuse.wv"][1], 0.0)
    assert np.any(g.blocks["fuse.wk"][0] != 0)


def test_context_tokens():
    planes = np.zeros((1, 2, 2, 2))
    planes[0, 0] = [[3.0, -3.0], [3.0, -3.0]]
    ctx = attention_context(np.array([[0.5, 0.25]]), planes)
    np.testing.assert_allclose(ctx[0], [[0.5, 0.25, 3.0, 3.0], [0.5, 0.25, 0.0, 0.0]])


def test_time_embedding_shape_and_zero():
    e = time_embedding([0, 5], 8)
    assert e.shape == (2, 8)
    np.testing.assert_array_equal(e[0], [0, 0, 0, 0, 1, 1, 1, 1])


def test_arch_mismatch_rejected(tiny_inputs):
    x, t, z, f = tiny_inputs
    p = init_params(TINY, make_rng(0))
    with pytest.raises(InvariantError):
        forward(p, x, t, np.ones(5), f)
    with pytest.raises(InvariantError):
        forward(p, x, t, z, starlet_decompose(x, 3))
    with pytest.raises(InvariantError):
        forward(p, np.zeros((4, 4)), t, z, f)


def test_divergence_surfaces(tiny_inputs):
    p = init_params(TINY, make_rng(0))
    blocks = dict(p.blocks)
    blocks["head.b"] = np.array([1e308])
    blocks["head.w"] = np.full_like(blocks["head.w"], 1e308)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(DivergenceError):
        forward(DenoiserParams(TINY, blocks), *tiny_inputs)


def test_params_reject_bad_blocks():
    p = init_params(TINY, make_rng(0))
    blocks = dict(p.blocks)
    blocks["head.b"] = np.zeros(2)
    with pytest.raises(InvariantError):
        DenoiserParams(TINY, blocks)
    with pytest.raises(ParameterError):
        ArchitectureConfig(kernel_size=4)


def test_flat_round_trip():
    p = init_params(TINY, make_rng(3))
    np.testing.assert_array_equal(p.with_flat(p.flat()).flat(), p.flat())
    with pytest.raises(InvariantError):
        p.with_flat(np.zeros(10))


# -- Adam ---------------------------------------------------------------------

def single_block(value):
    arch = ArchitectureConfig(channels=1, emb_dim=1, scales=1, n_blocks=0, kernel_size=1, time_dim=2)
    base = init_params(arch, make_rng(0))
    return base.with_flat(np.full(count_params(arch), value))


def test_adam_zero_gradient_keeps_params():
    p = single_block(0.7)
    new, state = adam_step(p, p.zeros_like(), AdamState.zeros(p), lr=0.1)
    np.testing.assert_array_equal(new.flat(), p.flat())
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    # bias correction makes the first update lr * g / (|g| + eps_hat) per coordinate
    p = single_block(0.0)
    g = p.with_flat(np.linspace(-2, 2, count_params(p.arch)) + 0.1)
    new, _ = adam_step(p, g, AdamState.zeros(p), lr=1e-3, eps_hat=0.0)
    np.testing.assert_allclose(new.flat(), -1e-3 * np.sign(g.flat()), rtol=1e-12)


def test_adam_matches_scalar_reference():
    p = single_block(1.0)
    state = AdamState.zeros(p)
    theta, m, v = 1.0, 0.0, 0.0
    for k in range(1, 6):
        g = 0.3 * k
        p, state = adam_step(p, p.with_flat(np.full(p.flat().size, g)), state, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.01 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
    np.testing.assert_allclose(p.flat(), theta, rtol=1e-13)


def test_adam_rejects_mismatched_grads():
    p = single_block(0.0)
    with pytest.raises(InvariantError):
        adam_step(p, init_params(TINY, make_rng(0)), AdamState.zeros(p))
