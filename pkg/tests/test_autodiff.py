import math

import numpy as np
import pytest
import torch

from aecct.autodiff import (adam_step, analytic_grad, broadcast, concat, cosine_lr,
                            finite_difference_grad, layer_norm, load_checkpoint, masked_softmax,
                            matmul, relative_error, relu, reduce_mean, reduce_sum, save_checkpoint,
                            slice_, transpose, add, mul)

GEN = torch.Generator().manual_seed(0)


def rand(*shape):
    return torch.randn(*shape, generator=GEN, dtype=torch.float64)


X = rand(5, 7)
Y = rand(5, 7)
W = rand(7, 5)
PROBE = rand(5, 7)
PROBE55 = rand(5, 5)
MASK = torch.rand(5, 7, generator=GEN) > 0.4
MASK[:, 0] = True

CASES = {
    "matmul": (lambda a, b: (matmul(a, b) * PROBE55).sum(), [X, W]),
    "add": (lambda a, b: (add(a, b) ** 2).sum(), [X, Y]),
    "mul": (lambda a, b: (mul(a, b) * PROBE).sum(), [X, Y]),
    "concat": (lambda a, b: (concat([a, b], dim=-1) ** 2 * torch.arange(14.0)).sum(), [X, Y]),
    "slice": (lambda a: (slice_(a, 1, 5) ** 3).sum(), [X]),
    "transpose": (lambda a: (transpose(a) * PROBE.T).sum(), [X]),
    "relu": (lambda a: (relu(a) * PROBE).sum(), [X + 0.05 * torch.sign(X)]),
    "masked_softmax": (lambda a: (masked_softmax(a, MASK) * PROBE).sum(), [X]),
    "layer_norm": (lambda a, g, b: (layer_norm(a, g, b) * PROBE).sum(), [X, rand(7), rand(7)]),
    "sum": (lambda a: (reduce_sum(a, dim=0) ** 2).sum(), [X]),
    "mean": (lambda a: (reduce_mean(a, dim=1) ** 2).sum(), [X]),
    "broadcast": (lambda a: (broadcast(a, (5, 7)) * PROBE).sum(), [rand(1, 7)]),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients_match_finite_differences(name):
    fn, inputs = CASES[name]
    for a, n in zip(analytic_grad(fn, inputs), finite_difference_grad(fn, inputs, step=1e-4)):
        assert relative_error(a, n) < 1e-4


def test_relu_gradient_convention():
    x = torch.tensor([2.0, -1.0, 0.0], requires_grad=True)
    relu(x).sum().backward()
    assert x.grad.tolist() == [1.0, 0.0, 0.0]


def test_masked_softmax_single_allowed_entry():
    mask = torch.tensor([[False, True, False]])
    w = masked_softmax(torch.tensor([[5.0, -3.0, 9.0]]), mask)
    assert w.tolist() == [[0.0, 1.0, 0.0]]


def test_masked_softmax_empty_row_is_zero():
    mask = torch.tensor([[False, False], [True, True]])
    w = masked_softmax(torch.zeros(2, 2), mask)
    assert w.tolist() == [[0.0, 0.0], [0.5, 0.5]]


def test_masked_softmax_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        masked_softmax(torch.zeros(2, 3), torch.ones(2, 2, dtype=torch.bool))


def test_adam_zero_gradient_keeps_parameters():
    p = torch.tensor([1.0, -2.0])
    adam_step([p], [torch.zeros(2)], {}, lr=1e-3)
    assert p.tolist() == [1.0, -2.0]


def test_adam_single_step_matches_scalar_oracle():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    g = 0.37
    p = torch.tensor([0.5], dtype=torch.float64)
    adam_step([p], [torch.tensor([g], dtype=torch.float64)], {}, lr=lr)
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    assert p.item() == pytest.approx(0.5 - lr * m_hat / (math.sqrt(v_hat) + eps), abs=1e-15)


def test_adam_constant_gradient_step_approaches_lr():
    p = torch.tensor([0.0, 0.0], dtype=torch.float64)
    state = {}
    for _ in range(200):
        before = p.clone()
        adam_step([p], [torch.tensor([3.0, -0.01], dtype=torch.float64)], state, lr=1e-2)
    step = (p - before).tolist()
    assert step[0] == pytest.approx(-1e-2, rel=1e-3)
    assert step[1] == pytest.approx(1e-2, rel=1e-3)


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 1000) == pytest.approx(1e-4)
    assert cosine_lr(1000, 1000) == pytest.approx(5e-7)
    assert cosine_lr(500, 1000) == pytest.approx((1e-4 + 5e-7) / 2)
    with pytest.raises(ValueError):
        cosine_lr(1001, 1000)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    tensors = {"a": torch.randn(3, 4), "b": np.arange(5, dtype=np.int8), "c": rand(2)}
    save_checkpoint(tmp_path / "x.ckpt", tensors, {"note": "hi", "step": 3})
    back, meta = load_checkpoint(tmp_path / "x.ckpt")
    assert meta == {"note": "hi", "step": 3}
    for name, t in tensors.items():
        arr = t.numpy() if torch.is_tensor(t) else t
        assert back[name].dtype == arr.dtype
        assert back[name].tobytes() == arr.tobytes()
