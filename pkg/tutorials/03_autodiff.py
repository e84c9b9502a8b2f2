# The autodiff engine
# ===================
#
# gpsnet trains with its own small reverse-mode engine. A Value wraps a
# float64 array; operations on Values record a tape, and backward() walks
# it in reverse topological order, accumulating gradients into every leaf
# created with requires_grad=True.

import numpy as np

from gpsnet import autodiff as ad
from gpsnet.autodiff import ParamStore, Value, grad_check

x = Value(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
w = Value(np.array([[0.3], [-0.7]]), requires_grad=True)

# loss = sum(relu(x @ w))
loss = ad.total(ad.relu(ad.matmul(x, w)))
loss.backward()
print("loss", loss.data)
print("dloss/dw", w.grad.ravel())      # only rows with a positive pre-activation count
print("dloss/dx", x.grad)

# Python operators map onto the same ops.
y = (x * 2.0 + 1.0) / Value(np.array([[4.0, 4.0]]))
print(y.data)


# Checking gradients
# ------------------
# grad_check rebuilds the loss from scratch, perturbs sampled coordinates
# and compares a five-point finite-difference estimate against backprop.
# It returns the worst relative error.

def f():
    return ad.total(ad.softmax_rows(ad.matmul(x, w) * x) * np.arange(4.0).reshape(2, 2))

print("softmax chain, worst relative error:", grad_check(f, [x, w]))


# Graph ops
# ---------
# Message passing needs gathers (read a row per arc) and segment sums
# (add rows into their target node). Their backward passes are each
# other's transposes.

feat = Value(np.arange(8.0).reshape(4, 2), requires_grad=True)
src, dst = np.array([0, 0, 1, 2, 3]), np.array([1, 2, 0, 3, 2])
msg = ad.gather_rows(feat, dst)
agg = ad.segment_sum(msg, src, 4)
print("aggregated", agg.data.tolist())
ad.total(agg).backward()
print("each row is read once per incoming arc:", feat.grad[:, 0])


# Fused attention
# ---------------
# segment_attention runs multi-head softmax attention inside each graph of
# a batch. Graphs are padded to a common size with a -inf key mask, so no
# node ever attends across graphs.

rng = np.random.default_rng(0)
q, k, v = (Value(rng.normal(size=(5, 4)), requires_grad=True) for _ in range(3))
seg = np.array([0, 0, 0, 1, 1])
out = ad.segment_attention(q, k, Value(np.ones((5, 4))), seg, heads=2)
print("attention rows are convex combinations:", np.allclose(out.data, 1.0))
print("fused attention gradient error:",
      grad_check(lambda: ad.total(ad.segment_attention(q, k, v, seg, heads=2) * 0.3), [q, k, v]))


# Parameters and randomness
# -------------------------
# A ParamStore owns the named learnable tensors, the optimizer moments and
# the batch-norm running statistics. Random draws come from named Philox
# streams, so adding a new consumer never shifts an existing one.

store = ParamStore()
store.glorot("lin.w", 4, 3, ad.rng_stream(0, "init"))
store.zeros("lin.b", 3)
print("parameters:", store.num_params())
a1 = ad.rng_stream(7, "dropout", 3).normal(size=3)
a2 = ad.rng_stream(7, "dropout", 3).normal(size=3)
b1 = ad.rng_stream(7, "shuffle", 3).normal(size=3)
print("same stream repeats:", np.array_equal(a1, a2), "| different name differs:",
      not np.array_equal(a1, b1))
