import numpy as np
import pytest

from tagclass import autodiff as ad
from tagclass.autodiff import NumericError, ParamSet, ShapeError, Tensor


def make_params(rng, **shapes) -> ParamSet:
    ps = ParamSet()
    for name, shape in shapes.items():
        ps.add(name, Tensor(rng.standard_normal(shape), requires_grad=True))
    return ps


class TestForwardExamples:
    def test_softmax_of_zeros_is_uniform(self):
        p = ad.softmax(Tensor([[0.0, 0.0]]))
        np.testing.assert_array_equal(p.data, [[0.5, 0.5]])

    def test_softmax_rows_sum_to_one(self, rng):
        p = ad.softmax(Tensor(rng.standard_normal((6, 9)) * 10))
        np.testing.assert_allclose(p.data.sum(axis=1), 1.0, atol=1e-12)

    def test_cosine_of_identical_nonzero_rows_is_one(self):
        a = Tensor([[3.0, 4.0], [1.0, 0.0]])
        out = ad.cosine_rows(a, Tensor(a.data.copy()))
        np.testing.assert_array_equal(out.data, [1.0, 1.0])

    def test_matmul_identity(self, rng):
        a = rng.standard_normal((2, 3))
        out = ad.matmul(Tensor(np.eye(2)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)|\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
        with pytest.raises(ShapeError) as info:
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))
        assert "(2, 3)" in str(info.value) and "(4,)" in str(info.value)

    def test_non_finite_output_raises(self):
        with pytest.raises(NumericError):
            ad.log(Tensor([0.0]))


class TestBackward:
    def test_sum_gradient_is_ones(self, rng):
        ps = make_params(rng, p=(3,))
        grads = ad.backward(ad.sum_(ps["p"]), ps)
        np.testing.assert_array_equal(grads["p"], np.ones(3))

    def test_quadratic_gradient_is_p(self, rng):
        ps = make_params(rng, p=(4,))
        loss = ad.sum_(ps["p"] * ps["p"]) * 0.5
        np.testing.assert_allclose(ad.backward(loss, ps)["p"], ps["p"].data,
                                   atol=1e-12)

    def test_unreachable_parameter_gets_zeros(self, rng):
        ps = make_params(rng, p=(3,), q=(2, 2))
        grads = ad.backward(ad.sum_(ps["p"]), ps)
        np.testing.assert_array_equal(grads["q"], np.zeros((2, 2)))

    def test_non_scalar_loss_rejected(self, rng):
        ps = make_params(rng, p=(3,))
        with pytest.raises(ShapeError):
            ad.backward(ps["p"] * 2.0, ps)

    def test_backward_is_linear(self, rng):
        ps = make_params(rng, p=(5,), q=(5,))

        def l1(ps):
            return ad.sum_(ps["p"] * ps["q"])

        def l2(ps):
            return ad.mean(ad.relu(ps["p"]) + ps["q"] * ps["q"])

        a, b = 0.3, -1.7
        combo = ad.backward(l1(ps) * a + l2(ps) * b, ps)
        g1 = ad.backward(l1(ps), ps)
        g2 = ad.backward(l2(ps), ps)
        for name in ps.names():
            np.testing.assert_allclose(combo[name], a * g1[name] + b * g2[name],
                                       atol=1e-10)

    def test_gradients_accumulate_across_reuse(self, rng):
        ps = make_params(rng, p=(3,))
        loss = ad.sum_(ps["p"] + ps["p"])
        np.testing.assert_array_equal(ad.backward(loss, ps)["p"], 2 * np.ones(3))


class TestGradCheckOnOps:
    """Central differences validate every op's hand-written vjp."""

    def test_quadratic_is_nearly_exact(self, rng):
        ps = make_params(rng, p=(4,))
        err = ad.grad_check(lambda ps: ad.sum_(ps["p"] * ps["p"]) * 0.5, ps, eps=1e-5)
        assert err < 1e-8

    @pytest.mark.parametrize("name,builder", [
        ("add_broadcast", lambda ps: ad.sum_(ps["a"] + ps["row"])),
        ("sub", lambda ps: ad.sum_(ps["a"] - ps["b"])),
        ("mul_broadcast", lambda ps: ad.sum_(ps["a"] * ps["row"])),
        ("div", lambda ps: ad.sum_(ps["a"] / (ps["b"] * ps["b"] + 2.0))),
        ("matmul", lambda ps: ad.sum_(ad.matmul(ps["a"], ps["w"]))),
        ("matmul_batched", lambda ps: ad.sum_(
            ad.matmul(ps["c3"], ad.transpose_last2(ps["c3"])))),
        ("exp_log", lambda ps: ad.sum_(ad.log(ad.exp(ps["a"]) + 1.0))),
        ("relu", lambda ps: ad.sum_(ad.relu(ps["a"] + 0.05))),
        ("softmax", lambda ps: ad.sum_(ad.softmax(ps["a"]) * ps["b"])),
        ("softmax_masked", lambda ps: ad.sum_(
            ad.softmax(ps["a"], mask=np.array([True, True, False, True])) * ps["b"])),
        ("logsumexp", lambda ps: ad.sum_(ad.logsumexp(ps["a"]))),
        ("logsumexp_masked", lambda ps: ad.sum_(
            ad.logsumexp(ps["a"], mask=np.array([True, False, True, True])))),
        ("mean_axis", lambda ps: ad.sum_(ad.mean(ps["a"], axis=0) * ps["row"])),
        ("gather_rows", lambda ps: ad.sum_(
            ad.gather_rows(ps["a"], np.array([1, 0, 1])) * 2.0)),
        ("concat_rows", lambda ps: ad.sum_(
            ad.concat_rows([ps["a"], ps["b"]]) * 0.5)),
        ("concat_last", lambda ps: ad.sum_(
            ad.concat([ps["a"], ps["b"]], axis=-1) * 1.5)),
        ("diagonal", lambda ps: ad.sum_(ad.diagonal(ps["sq"]))),
        ("layer_norm", lambda ps: ad.sum_(
            ad.layer_norm(ps["a"], ps["gain"], ps["bias"]) * ps["b"])),
        ("masked_mean", lambda ps: ad.sum_(
            ad.masked_mean_rows(ps["c3"],
                                np.array([[True, True], [True, False]])))),
        ("row_norm", lambda ps: ad.sum_(ad.row_norm(ps["a"]))),
        ("l2_normalize", lambda ps: ad.sum_(ad.l2_normalize_rows(ps["a"]) * ps["b"])),
        ("cosine_rows", lambda ps: ad.sum_(ad.cosine_rows(ps["a"], ps["b"]))),
        ("cosine_matrix", lambda ps: ad.sum_(ad.cosine_matrix(ps["a"], ps["b"]))),
        ("reshape", lambda ps: ad.sum_(ad.reshape(ps["a"], (4, 3)) * 0.7)),
    ])
    def test_op_gradients(self, rng, name, builder):
        ps = make_params(rng, a=(3, 4), b=(3, 4), row=(4,), w=(4, 2),
                         c3=(2, 2, 3), sq=(3, 3), gain=(4,), bias=(4,))
        assert ad.grad_check(builder, ps, eps=1e-5) < 1e-6, name

    def test_grad_check_rejects_bad_eps(self, rng):
        ps = make_params(rng, p=(2,))
        with pytest.raises(ValueError):
            ad.grad_check(lambda ps: ad.sum_(ps["p"]), ps, eps=0.0)

    def test_negate_grad_breaks_the_check(self, rng):
        ps = make_params(rng, p=(3,))
        err = ad.grad_check(lambda ps: ad.negate_grad(ad.sum_(ps["p"] * ps["p"])),
                            ps, eps=1e-5)
        assert err > 0.1


class TestParamSet:
    def test_duplicate_names_rejected(self, rng):
        ps = make_params(rng, p=(2,))
        with pytest.raises(ValueError):
            ps.add("p", Tensor(np.zeros(2), requires_grad=True))

    def test_subset_by_prefix(self, rng):
        ps = make_params(rng, **{"text.w": (2,), "graph.w": (2,)})
        assert ps.subset(("text.",)).names() == ["text.w"]
