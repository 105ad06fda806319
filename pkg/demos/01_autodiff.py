# %% [markdown]
# The numeric core: a small reverse-mode autodiff over float64 numpy arrays.
# Every op records its parents and a closure that pushes gradients back.

# %%
import numpy as np

from dafe import numerics as nx

rng = np.random.default_rng(0)
x = nx.Parameter("x", rng.normal(size=(3, 4)), "base")
w = nx.Parameter("w", rng.normal(size=(4, 5)), "base")
b = nx.Parameter("b", np.zeros(5), "base")
g = nx.Parameter("g", np.ones(5), "base")
beta = nx.Parameter("beta", np.zeros(5), "base")

# %%
# A tiny network: affine -> layer norm -> relu -> cross-entropy.
def loss():
    h = nx.relu(nx.layer_norm(nx.affine(x, w, b), g, beta))
    return nx.cross_entropy(h, [1, 3, 0], ignore_index=0)  # the third row is ignored

out = loss()
out.backward()
print("loss", float(out.data))
print("d loss / d w, first row:", np.round(w.grad[0], 4))

# %%
# Central finite differences agree with the analytic gradient.
for p in (x, w, b, g, beta):
    p.zero_grad()
err = nx.grad_check(loss, [x, w, b, g, beta], h=1e-5)
print(f"max relative error vs finite differences: {err:.2e}")

# %%
# Parameters carry an immutable group tag. The optimiser uses these tags to
# decide which tensors a given training step may touch.
print(w.group, nx.GROUPS)
