import numpy as np
import pytest
import torch

from llb.datamodel import InputError
from llb.fusion import AdaptiveFusion, Gate, SegDecoder, afm_fuse, plain_sum, soft_aggregate


def zero_params(module):
    for p in module.parameters():
        torch.nn.init.zeros_(p)


class TestAfm:
    def test_zero_gates_halve(self):
        fusion = AdaptiveFusion(6)
        zero_params(fusion)
        a, b = torch.randn(2, 6, 4, 4), torch.randn(2, 6, 4, 4)
        assert torch.equal(fusion(a, b), 0.5 * a + 0.5 * b)

    def test_zero_second_branch(self):
        fusion = AdaptiveFusion(6)
        a = torch.randn(1, 6, 3, 3)
        torch.testing.assert_close(fusion(a, torch.zeros_like(a)), fusion.gate1(a) * a)

    def test_bounded_by_inputs(self):
        fusion = AdaptiveFusion(6)
        a, b = torch.randn(3, 6, 5, 5) * 3, torch.randn(3, 6, 5, 5) * 3
        assert (fusion(a, b).abs() <= a.abs() + b.abs() + 1e-6).all()

    def test_gates_strictly_inside_unit_interval(self):
        gate = Gate(6)
        g = gate(torch.randn(4, 6, 5, 5) * 3)
        assert g.min() > 0 and g.max() < 1

    def test_unit_gates_equal_plain_sum(self):
        a, b = torch.randn(2, 6, 4, 4), torch.randn(2, 6, 4, 4)
        one = lambda x: torch.ones_like(x)
        torch.testing.assert_close(afm_fuse(a, b, one, one), plain_sum(a, b), atol=1e-6, rtol=0)

    def test_disabled_is_plain_sum(self):
        a, b = torch.randn(1, 6, 2, 2), torch.randn(1, 6, 2, 2)
        assert torch.equal(AdaptiveFusion(6, enabled=False)(a, b), a + b)

    def test_mismatch_rejected(self):
        with pytest.raises(InputError):
            AdaptiveFusion(6)(torch.randn(1, 6, 2, 2), torch.randn(1, 6, 3, 3))

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        fusion = AdaptiveFusion(3).double()
        a = torch.randn(1, 3, 2, 2, dtype=torch.float64, requires_grad=True)
        b = torch.randn(1, 3, 2, 2, dtype=torch.float64, requires_grad=True)
        probe = torch.randn(1, 3, 2, 2, dtype=torch.float64)
        f = lambda: (fusion(a, b) * probe).sum()
        f().backward()
        for t in (a, b):
            fd = torch.zeros_like(t)
            with torch.no_grad():
                for idx in np.ndindex(*t.shape):
                    orig = t[idx].item()
                    t[idx] = orig + 1e-6
                    up = f().item()
                    t[idx] = orig - 1e-6
                    down = f().item()
                    t[idx] = orig
                    fd[idx] = (up - down) / 2e-6
            assert ((t.grad - fd).norm() / fd.norm()).item() < 1e-3


class TestPlainSum:
    def test_zeros(self):
        assert torch.count_nonzero(plain_sum(torch.zeros(2, 2), torch.zeros(2, 2))) == 0

    def test_cancellation(self):
        a = torch.randn(3, 3)
        assert torch.count_nonzero(plain_sum(a, -a)) == 0

    def test_commutative(self):
        a, b = torch.randn(3, 3), torch.randn(3, 3)
        assert torch.equal(plain_sum(a, b), plain_sum(b, a))


class TestDecoder:
    def test_shape(self):
        dec = SegDecoder(32, (48, 32))
        out = dec(torch.randn(1, 32, 4, 4), [torch.randn(1, 48, 8, 8), torch.randn(1, 32, 16, 16)], (64, 64))
        assert out.shape == (1, 64, 64)

    def test_deterministic(self):
        dec = SegDecoder(8, (4, 4))
        args = (torch.randn(1, 8, 2, 2), [torch.randn(1, 4, 4, 4), torch.randn(1, 4, 8, 8)], (32, 32))
        assert torch.equal(dec(*args), dec(*args))

    def test_zero_head_gives_half_probability(self):
        dec = SegDecoder(8, (4, 4))
        zero_params(dec.head)
        out = dec(torch.randn(1, 8, 2, 2), [torch.randn(1, 4, 4, 4), torch.randn(1, 4, 8, 8)], (32, 32))
        assert torch.count_nonzero(out) == 0
        assert torch.all(torch.sigmoid(out) == 0.5)

    def test_missing_skips(self):
        dec = SegDecoder(8, (4, 4))
        with pytest.raises(InputError):
            dec(torch.randn(1, 8, 2, 2), [torch.randn(1, 4, 4, 4)], (32, 32))
        with pytest.raises(InputError):
            SegDecoder(8, (4,))


class TestSoftAggregate:
    def test_single_half(self):
        out = soft_aggregate([torch.full((2, 2), 0.5)])
        torch.testing.assert_close(out, torch.full((2, 2, 2), 0.5))

    def test_absent_objects_go_to_background(self):
        out = soft_aggregate(torch.zeros(2, 3, 3))
        assert (out[0] > 0.999).all() and (out[1:] < 1e-3).all()

    def test_simplex(self):
        out = soft_aggregate(torch.rand(4, 8, 8, dtype=torch.float64))
        assert (out >= 0).all()
        torch.testing.assert_close(out.sum(0), torch.ones(8, 8, dtype=torch.float64), atol=1e-6, rtol=0)

    def test_argmax_independent_of_eps(self):
        p = torch.rand(3, 16, 16, dtype=torch.float64) * 0.98 + 0.01
        a = soft_aggregate(p, eps=1e-5).argmax(0)
        b = soft_aggregate(p, eps=1e-3).argmax(0)
        assert torch.equal(a, b)

    def test_formula_by_hand(self):
        p1, p2 = 0.8, 0.3
        bg = (1 - p1) * (1 - p2)
        odds = np.array([bg / (1 - bg), p1 / (1 - p1), p2 / (1 - p2)])
        out = soft_aggregate(torch.tensor([[[p1]], [[p2]]], dtype=torch.float64))
        np.testing.assert_allclose(out[:, 0, 0].numpy(), odds / odds.sum(), rtol=1e-9)

    def test_no_objects(self):
        with pytest.raises(InputError):
            soft_aggregate([])
