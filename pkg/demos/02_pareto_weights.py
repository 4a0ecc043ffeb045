"""Balancing conflicting objectives with min-norm weights.

Two cluster gradients of very different size: plain summation follows the big
one. The min-norm point in their convex hull gives a direction that decreases
both, and the weights lean towards the smaller gradient.
"""
import numpy as np

from icmt import gram_matrix, kkt_check, pe_solve

g = np.array([[2.0, 0.0],    # large head-cluster gradient
              [0.0, 1.0]])   # small tail-cluster gradient
M = gram_matrix(g)
w = pe_solve(M)
d = (w / 2) @ g
print("weights", w, "sum", w.sum())
print("combined direction", d)
print("directional derivative per objective", g @ d)  # both positive: a common descent direction
print("kkt", kkt_check(w, M))

# the plain conditional-gradient loop reaches the same point, slower
trace_w = pe_solve(M, method="frank-wolfe")
print("frank-wolfe weights", trace_w)

# conflicting gradients: the tail cluster gets more than its even share
rng = np.random.default_rng(0)
head = rng.normal(size=50) * 3.0
tail = -0.3 * head / 3.0 + rng.normal(size=50)
w = pe_solve(gram_matrix([head, tail]))
print(f"head weight {w[0]:.3f}, tail weight {w[1]:.3f}")
