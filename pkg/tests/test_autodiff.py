import numpy as np
import pytest

from radarmotion.autodiff import (MLP, SGD, Adam, Linear, MultiHeadAttention, NumericalError,
                                  Parameter, SelfAttentionLayer, ShapeError, Tensor, checkpoint,
                                  concat, div, exp, film, layer_norm, linear, matmul, mean, relu,
                                  silu, softmax, sum_squares, tanh, tmax, tsum)
from radarmotion.autodiff.gradcheck import check_gradients


def leaf(rng, *shape, name=None):
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


# weights w make every check a non-trivial scalar function
def weighted(out, w):
    return tsum(out * Tensor(w))


PRIMITIVES = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)]),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 1)]),
    "mul": (lambda a, b: a * b, [(2, 3), (2, 3)]),
    "div": (lambda a, b: div(a, exp(b)), [(2, 3), (2, 3)]),
    "power": (lambda a: exp(a) ** 1.5, [(3, 2)]),
    "relu": (lambda a: relu(a), [(4, 5)]),
    "silu": (lambda a: silu(a), [(4, 5)]),
    "tanh": (lambda a: tanh(a), [(4, 5)]),
    "exp": (lambda a: exp(a * 0.5), [(3, 3)]),
    "sum_axis": (lambda a: tsum(a, axis=1), [(3, 4)]),
    "mean_axis": (lambda a: mean(a, axis=0, keepdims=True), [(3, 4)]),
    "max_pool": (lambda a: tmax(a, axis=1), [(3, 5, 2)]),
    "reshape": (lambda a: a.reshape(6, 2), [(3, 4)]),
    "transpose": (lambda a: a.transpose(2, 0, 1), [(2, 3, 4)]),
    "getitem_basic": (lambda a: a[:, 1:3], [(3, 4)]),
    "getitem_fancy": (lambda a: a[np.array([0, 2, 0])], [(3, 4)]),
    "concat": (lambda a, b: concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "matmul": (lambda a, b: matmul(a, b), [(3, 4), (4, 2)]),
    "matmul_batched": (lambda a, b: matmul(a, b), [(2, 3, 4), (2, 4, 5)]),
    "linear": (lambda x, w, b: linear(x, w, b), [(2, 3, 4), (4, 5), (5,)]),
    "softmax": (lambda a: softmax(a, axis=-1), [(3, 5)]),
    "layer_norm": (lambda x, g, b: layer_norm(x, g, b), [(3, 6), (6,), (6,)]),
    "film": (lambda h, a, b: film(h, a, b), [(2, 3, 4), (2, 1, 4), (1, 3, 4)]),
    "sum_squares": (lambda a, b: sum_squares(a, b), [(3, 4), (3, 4)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_gradients(name, seed):
    fn, shapes = PRIMITIVES[name]
    rng = np.random.default_rng([seed, len(name)])
    xs = [leaf(rng, *s) for s in shapes]
    out_shape = fn(*xs).shape
    w = rng.normal(size=out_shape)
    errs = check_gradients(lambda: weighted(fn(*xs), w), xs, eps=1e-5)
    assert max(errs.values()) < 1e-6, errs


def test_matmul_examples():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(eye, m).data, m.data)
    assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(3)), Tensor(np.zeros(3))
    assert np.allclose(layer_norm(Tensor([1.0, 1.0, 1.0]), one, zero).data, 0.0)
    out = layer_norm(Tensor([-1.0, 1.0]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    assert np.allclose(out, [-1.0, 1.0], atol=1e-4)


def test_film_examples():
    h = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(film(h, 1.0, 0.0).data, h.data)
    assert film(Tensor(2.0), Tensor(3.0), Tensor(1.0)).item() == 7.0
    with pytest.raises(ShapeError):
        film(h, Tensor(np.ones(4)), 0.0)


def test_attention_single_token_and_rows():
    rng = np.random.default_rng(0)
    mha = MultiHeadAttention(8, 2, rng)
    x = Tensor(rng.normal(size=(1, 8)))
    out = mha(x).data
    assert np.allclose(mha.last_weights, 1.0)
    v = x.data @ mha.value.weight.data + mha.value.bias.data
    assert np.allclose(out, v @ mha.out.weight.data + mha.out.bias.data)
    mha(Tensor(rng.normal(size=(3, 5, 8))))
    assert np.allclose(mha.last_weights.sum(axis=-1), 1.0, atol=1e-9)


def test_attention_permutation_equivariant():
    rng = np.random.default_rng(1)
    layer = SelfAttentionLayer(8, 4, rng)
    x = rng.normal(size=(6, 8))
    perm = rng.permutation(6)
    assert np.allclose(layer(Tensor(x)).data[perm], layer(Tensor(x[perm])).data, atol=1e-12)


def test_attention_layer_gradients():
    rng = np.random.default_rng(2)
    layer = SelfAttentionLayer(8, 2, rng)
    x = leaf(rng, 2, 4, 8, name="x")
    w = rng.normal(size=(2, 4, 8))
    errs = check_gradients(lambda: weighted(layer(x), w), [x, *layer.parameters()])
    assert max(errs.values()) < 1e-6, errs


def test_non_finite_rejected():
    with pytest.raises(NumericalError):
        div(Tensor([1.0]), Tensor([0.0]))
    with pytest.raises(NumericalError), np.errstate(over="ignore"):
        exp(Tensor([1e4]))


def test_forward_deterministic():
    mlp = MLP(3, 8, 2, np.random.default_rng(5))
    x = Tensor(np.random.default_rng(6).normal(size=(4, 3)))
    assert np.array_equal(mlp(x).data, mlp(x).data)
    assert np.array_equal(MLP(3, 8, 2, np.random.default_rng(5)).fc1.weight.data, mlp.fc1.weight.data)


def test_sgd_examples():
    p = Parameter([1.0], name="p")
    opt = SGD([p], lr=0.1)
    p.grad = np.array([2.0])
    opt.step()
    assert p.data[0] == pytest.approx(0.8)
    p.grad = np.array([0.0])
    opt.step()
    assert p.data[0] == pytest.approx(0.8)


def test_adam_first_step():
    p = Parameter([1.0, -2.0], name="p")
    opt = Adam([p], lr=0.01)
    p.grad = np.array([3.0, -0.5])
    opt.step()
    # bias-corrected moments give a step of lr * g / |g|
    assert np.allclose(p.data, [0.99, -1.99], atol=1e-8)
    assert opt.state.step == 1 and opt.state.first_moment["p"].shape == (2,)


def test_duplicate_parameter_names_rejected():
    with pytest.raises(ValueError):
        SGD([Parameter([1.0], name="a"), Parameter([2.0], name="a")])


def test_mlp_fits_line():
    rng = np.random.default_rng(0)
    x = np.linspace(-1, 1, 100).reshape(-1, 1)
    y = 2 * x + 1
    mlp = MLP(1, 16, 1, rng)
    opt = Adam(mlp.parameters(), lr=1e-2)
    for _ in range(2000):
        loss = sum_squares(mlp(Tensor(x)), Tensor(y)) * (1.0 / len(x))
        loss.backward()
        opt.step()
        if loss.item() < 1e-4:
            break
    assert loss.item() < 1e-3


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    model = MLP(4, 5, 3, rng)
    state = {**model.state_dict(), "scalar": np.array(2.5)}
    checkpoint.save(tmp_path / "m.ckpt", state, meta={"kind": "test"})
    loaded, meta = checkpoint.load(tmp_path / "m.ckpt")
    assert meta == {"kind": "test"}
    assert list(loaded) == list(state)
    for k in state:
        assert loaded[k].shape == np.shape(state[k])
        assert loaded[k].tobytes() == np.asarray(state[k], dtype="<f8").tobytes()
    other = MLP(4, 5, 3, np.random.default_rng(9))
    other.load_state_dict({k: v for k, v in loaded.items() if k != "scalar"})
    x = Tensor(rng.normal(size=(2, 4)))
    assert np.array_equal(other(x).data, model(x).data)


def test_checkpoint_manifest_layout(tmp_path):
    checkpoint.save(tmp_path / "c.ckpt", {"a": np.ones((2, 3)), "b": np.arange(4.0)})
    raw = (tmp_path / "c.ckpt").read_bytes()
    head, payload = raw.split(b"END\n", 1)
    assert head.decode().splitlines()[1:] == ["count 2", "a 2,3 6 0", "b 4 4 48"]
    assert np.array_equal(np.frombuffer(payload, "<f8")[6:], np.arange(4.0))


def test_linear_layer_matches_matmul():
    rng = np.random.default_rng(4)
    lin = Linear(3, 2, rng)
    x = rng.normal(size=(5, 3))
    assert np.allclose(lin(Tensor(x)).data, x @ lin.weight.data + lin.bias.data)
