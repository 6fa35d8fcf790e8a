import numpy as np
import pytest

from isbe.autograd import Tape
from isbe.errors import ShapeError
from isbe.tensor import ConvSpec, Tensor

H = 1e-5


def analytic_and_fd(builder, arrays, seed_weights=None, h=H):
    """Gradients of sum(weights * builder(...)) wrt every input array,
    analytically via the tape and by central finite differences."""
    tape = Tape()
    ids = [tape.leaf(Tensor(a)) for a in arrays]
    out = builder(tape, ids)
    out_shape = tape.value(out).shape
    w = np.ones(out_shape) if seed_weights is None else seed_weights

    def value(arrs):
        t = Tape()
        nids = [t.leaf(Tensor(a)) for a in arrs]
        o = builder(t, nids)
        return float((t.value(o).data * w).sum())

    tape.backward(out, Tensor(w))
    analytic = [tape.grad(i).data for i in ids]

    fd = []
    for which, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        flat = g.reshape(-1)
        for j in range(a.size):
            bump = [arr.copy() for arr in arrays]
            bump[which].reshape(-1)[j] += h
            plus = value(bump)
            bump[which].reshape(-1)[j] -= 2 * h
            flat[j] = (plus - value(bump)) / (2 * h)
        fd.append(g)
    return analytic, fd


def assert_grads_close(analytic, fd, rtol=1e-6):
    for a, f in zip(analytic, fd):
        denom = np.maximum(np.abs(f), 1.0)
        assert (np.abs(a - f) / denom).max() <= rtol


OPS = {
    "add": (lambda t, i: t.add(i[0], i[1]), [(3, 4), (3, 4)]),
    "add_broadcast": (lambda t, i: t.add(i[0], i[1]), [(3, 4), (4,)]),
    "sub": (lambda t, i: t.sub(i[0], i[1]), [(2, 3), (2, 3)]),
    "mul": (lambda t, i: t.mul(i[0], i[1]), [(4,), (4,)]),
    "div": (lambda t, i: t.div(i[0], i[1]), [(3,), (3,)]),
    "scale": (lambda t, i: t.scale(i[0], -2.5), [(2, 2)]),
    "exp": (lambda t, i: t.exp(i[0]), [(3, 3)]),
    "log": (lambda t, i: t.log(i[0]), [(5,)]),
    "relu": (lambda t, i: t.relu(i[0]), [(4, 4)]),
    "clamp": (lambda t, i: t.clamp(i[0], -0.5, 0.5), [(6,)]),
    "matmul": (lambda t, i: t.matmul(i[0], i[1]), [(3, 4), (4, 2)]),
    "reshape": (lambda t, i: t.reshape(i[0], (6,)), [(2, 3)]),
    "sum_all": (lambda t, i: t.sum(i[0]), [(3, 4)]),
    "sum_axis": (lambda t, i: t.sum(i[0], axis=1, keepdims=True), [(3, 4)]),
    "mean_all": (lambda t, i: t.mean(i[0]), [(2, 5)]),
    "mean_axis": (lambda t, i: t.mean(i[0], axis=0), [(4, 3)]),
    "conv2d": (lambda t, i: t.conv2d(i[0], i[1], i[2],
                                     ConvSpec(3, stride=2, out_channels=2)),
               [(2, 2, 6, 6), (2, 2, 3, 3), (2,)]),
    "conv2d_padded": (lambda t, i: t.conv2d(i[0], i[1], i[2],
                                            ConvSpec(3, out_channels=2, padded=True)),
                      [(1, 2, 5, 5), (2, 2, 3, 3), (2,)]),
    "dropout": (lambda t, i: t.dropout(i[0], 0.3, np.random.default_rng(5), True),
                [(5, 5)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_backward_matches_finite_differences(name, rng):
    builder, shapes = OPS[name]
    arrays = [rng.standard_normal(s) for s in shapes]
    if name == "log":
        arrays[0] = np.abs(arrays[0]) + 0.5
    if name == "div":
        arrays[1] = np.abs(arrays[1]) + 0.5
    analytic, fd = analytic_and_fd(builder, arrays)
    assert_grads_close(analytic, fd)


def test_exp_chain_rule(rng):
    x = rng.standard_normal((2, 3))
    g = rng.standard_normal((2, 3))
    tape = Tape()
    xid = tape.leaf(Tensor(x))
    yid = tape.exp(xid)
    tape.backward(yid, Tensor(g))
    assert np.allclose(tape.grad(xid).data, g * np.exp(x))


def test_sum_backward_is_ones(rng):
    tape = Tape()
    xid = tape.leaf(Tensor(rng.standard_normal((3, 2))))
    zid = tape.sum(xid)
    tape.backward(zid, Tensor(np.ones(())))
    assert np.array_equal(tape.grad(xid).data, np.ones((3, 2)))


def test_linear_closed_form(rng):
    # y = x W; grad(W) = x^T g, grad(x) = g W^T
    x, w = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
    g = rng.standard_normal((4, 2))
    tape = Tape()
    xid, wid = tape.leaf(Tensor(x)), tape.leaf(Tensor(w))
    yid = tape.matmul(xid, wid)
    tape.backward(yid, Tensor(g))
    assert np.allclose(tape.grad(wid).data, x.T @ g)
    assert np.allclose(tape.grad(xid).data, g @ w.T)


def test_zero_seed_gives_zero_grads(rng):
    tape = Tape()
    xid = tape.leaf(Tensor(rng.standard_normal((2, 2))))
    yid = tape.exp(tape.scale(xid, 2.0))
    tape.backward(yid, Tensor(np.zeros((2, 2))))
    assert np.array_equal(tape.grad(xid).data, np.zeros((2, 2)))


def test_seed_shape_mismatch(rng):
    tape = Tape()
    xid = tape.leaf(Tensor(rng.standard_normal((2, 2))))
    with pytest.raises(ShapeError):
        tape.backward(xid, Tensor(np.ones((3,))))


def test_fanout_accumulation_vs_duplicated_subgraph(rng):
    x = rng.standard_normal((3,))
    a = rng.standard_normal((3,))
    b = rng.standard_normal((3,))

    # shared: z = a*x + b*x
    tape = Tape()
    xid = tape.leaf(Tensor(x))
    zid = tape.sum(tape.add(tape.mul(tape.leaf(Tensor(a)), xid),
                            tape.mul(tape.leaf(Tensor(b)), xid)))
    tape.backward(zid, Tensor(np.ones(())))
    shared = tape.grad(xid).data

    # duplicated: two distinct leaves carrying the same value
    tape2 = Tape()
    x1, x2 = tape2.leaf(Tensor(x)), tape2.leaf(Tensor(x))
    z2 = tape2.sum(tape2.add(tape2.mul(tape2.leaf(Tensor(a)), x1),
                             tape2.mul(tape2.leaf(Tensor(b)), x2)))
    tape2.backward(z2, Tensor(np.ones(())))
    assert np.allclose(shared, tape2.grad(x1).data + tape2.grad(x2).data)


def test_seed_injection_equals_scalar_head(rng):
    # seeding node v with g == appending L = sum(g * v) and backward(L, 1)
    x = rng.standard_normal((2, 4))
    g = rng.standard_normal((2, 4))
    tape = Tape()
    xid = tape.leaf(Tensor(x))
    vid = tape.relu(tape.scale(xid, 1.7))
    tape.backward(vid, Tensor(g))
    injected = tape.grad(xid).data

    tape2 = Tape()
    xid2 = tape2.leaf(Tensor(x))
    vid2 = tape2.relu(tape2.scale(xid2, 1.7))
    lid = tape2.sum(tape2.mul(tape2.leaf(Tensor(g)), vid2))
    tape2.backward(lid, Tensor(np.ones(())))
    assert np.allclose(injected, tape2.grad(xid2).data)


def test_zero_grad_and_repeat_backward(rng):
    tape = Tape()
    xid = tape.leaf(Tensor(rng.standard_normal((3,))))
    yid = tape.exp(xid)
    first = tape.backward(yid, Tensor(np.ones(3)))[xid].data.copy()
    tape.zero_grad()
    assert np.array_equal(tape.grad(xid).data, np.zeros(3))
    second = tape.backward(yid, Tensor(np.ones(3)))[xid].data
    assert np.array_equal(first, second)


def test_unreachable_node_reads_zero(rng):
    tape = Tape()
    xid = tape.leaf(Tensor(rng.standard_normal((2,))))
    other = tape.leaf(Tensor(rng.standard_normal((5,))))
    yid = tape.exp(xid)
    tape.backward(yid, Tensor(np.ones(2)))
    assert np.array_equal(tape.grad(other).data, np.zeros(5))


def test_record_rejects_future_inputs():
    tape = Tape()
    with pytest.raises(ValueError):
        tape.record("exp", (0,), Tensor(np.ones(1)))
