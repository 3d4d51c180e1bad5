import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from awdiff import autodiff as ad
from awdiff.conditioning import (
    ConditioningEmbedding,
    ToyImageEmbedder,
    cosine_alignment_grad,
    cosine_alignment_loss,
    cosine_loss_graph,
    load_external_embedding,
    pooling_matrix,
    save_embedding,
    toy_image_embed,
    toy_text_embed,
)
from awdiff.errors import FormatError, ParameterError
from awdiff.image import make_rng, write_tensor
from oracles import central_differences, relative_error


def test_text_embed_deterministic_and_unit():
    a, b = toy_text_embed("3 B-lines"), toy_text_embed("3 B-lines")
    np.testing.assert_array_equal(a.values, b.values)
    assert a.dim == 16
    assert np.linalg.norm(a.values) == pytest.approx(1.0, abs=1e-12)
    assert a.source_tag == "toy-text"


def test_distinct_labels_not_parallel():
    a, b = toy_text_embed("2 B-lines"), toy_text_embed("5 B-lines")
    assert float(a.values @ b.values) < 1.0 - 1e-6


def test_text_embed_whitespace_insensitive():
    np.testing.assert_array_equal(toy_text_embed("2  B-lines").values, toy_text_embed(" 2 B-lines ").values)


def test_empty_label_rejected():
    with pytest.raises(ParameterError):
        toy_text_embed("   ")


def test_pooling_matrix_rows_average():
    m = pooling_matrix(10)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)
    assert np.count_nonzero(m) == 10
    with pytest.raises(ParameterError):
        pooling_matrix(5)


def test_image_embed_unit_and_deterministic(random_image):
    x = random_image(32, 32)
    z = toy_image_embed(x)
    assert np.linalg.norm(z.values) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_array_equal(z.values, toy_image_embed(x.copy()).values)


def test_image_embed_scale_invariant(random_image):
    x = random_image(16, 16)
    np.testing.assert_allclose(toy_image_embed(3.5 * x).values, toy_image_embed(x).values, atol=1e-14)


def test_image_embed_gradient(random_image):
    emb = ToyImageEmbedder()
    x = random_image(16, 16)
    upstream = make_rng(2).standard_normal(16)
    analytic = emb.gradient(x, upstream)
    numeric = central_differences(lambda v: float(emb(v.reshape(16, 16)).values @ upstream), x.ravel())
    assert relative_error(analytic.ravel(), numeric, floor=1e-4).max() < 1e-6


def test_external_round_trip(tmp_path):
    emb = toy_text_embed("1 B-lines")
    save_embedding(emb, tmp_path / "e.awt")
    back = load_external_embedding(tmp_path / "e.awt", dim=16)
    np.testing.assert_array_equal(back.values, emb.values)
    assert back.source_tag == "external-file"


def test_external_dim_mismatch_names_both(tmp_path):
    write_tensor(tmp_path / "e.awt", np.ones(8))
    with pytest.raises(FormatError, match=r"dim 8.*dim 16"):
        load_external_embedding(tmp_path / "e.awt", dim=16)


def test_external_rank_checked(tmp_path):
    write_tensor(tmp_path / "e.awt", np.ones((2, 8)))
    with pytest.raises(FormatError):
        load_external_embedding(tmp_path / "e.awt")


def test_zero_vector_loads_verbatim_but_has_no_cosine(tmp_path):
    write_tensor(tmp_path / "z.awt", np.zeros(16))
    z = load_external_embedding(tmp_path / "z.awt")
    np.testing.assert_array_equal(z.values, 0.0)
    with pytest.raises(ParameterError):
        cosine_alignment_loss(z, toy_text_embed("0 B-lines"))


def test_cosine_loss_landmarks():
    v = np.array([1.0, 2.0, -0.5])
    assert cosine_alignment_loss(v, v) == pytest.approx(0.0, abs=1e-15)
    assert cosine_alignment_loss(v, -v) == pytest.approx(2.0, abs=1e-15)
    assert cosine_alignment_loss(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(0.01, 100))
def test_cosine_loss_range_and_scale_invariance(seed, a, b):
    rng = make_rng(seed)
    u, v = rng.standard_normal((2, 6))
    base = cosine_alignment_loss(u, v)
    assert 0.0 <= base <= 2.0
    assert cosine_alignment_loss(a * u, b * v) == pytest.approx(base, abs=1e-12)


def test_cosine_grad_matches_differences(rng):
    u, v = rng.standard_normal((2, 6))
    numeric = central_differences(lambda x: cosine_alignment_loss(x, v), u)
    assert relative_error(cosine_alignment_grad(u, v), numeric).max() < 1e-6


def test_loss_graph_matches_scalar(rng):
    z, t = rng.standard_normal((2, 3, 5))
    with ad.Tape():
        batch = cosine_loss_graph(ad.Var(z), t).value
    np.testing.assert_allclose(batch, [cosine_alignment_loss(a, b) for a, b in zip(z, t)], atol=1e-15)


def test_composite_alignment_gradient(random_image):
    # pixels -> toy image embedding -> 1 - cos(., z_txt)
    emb = ToyImageEmbedder()
    x = random_image(16, 16)
    z_txt = toy_text_embed("4 B-lines").values

    def loss(flat):
        return cosine_alignment_loss(emb(flat.reshape(16, 16)), z_txt)

    pixels = ad.Var(x[None], requires_grad=True)
    with ad.Tape() as tape:
        total = cosine_loss_graph(emb.graph(pixels), z_txt[None]).sum()
    tape.backward(total)
    numeric = central_differences(loss, x.ravel())
    assert relative_error(pixels.grad[0].ravel(), numeric, floor=1e-4).max() < 1e-6


def test_embedding_rejects_bad_values():
    with pytest.raises(ValueError):
        ConditioningEmbedding(np.array([np.nan, 1.0]))
