# Estimating intrinsic dimension from covering numbers.

from probflow import targets as tg
from probflow.geometry import covering_curve, dimension_estimate

### Flat tori (S^1)^k placed in R^32

radii = {1: [0.4, 0.2, 0.1, 0.05], 2: [0.8, 0.6, 0.45, 0.34], 4: [1.6, 1.4, 1.2, 1.0]}
for k, eps in radii.items():
    pts, _ = tg.torus_points(4000, k, 32, seed=0)
    curve = covering_curve(pts, eps)
    est = dimension_estimate(curve)
    print(f"k={k}: nets {curve.counts.tolist()} -> k_hat {est.k_hat:.2f}")

# Higher k needs larger radii: with a few thousand points the nets saturate
# at the sample size before small scales are reached.

### A solid cube in R^32, for contrast with the hollow tori

cube, _ = tg.cube_points(4000, 3, 32, seed=0)
est = dimension_estimate(covering_curve(cube, [0.2, 0.14, 0.1]))
print("3-d cube:", round(est.k_hat, 2))

# This lands near 2.5, not 3. Balls near the faces cover less volume, and at
# a few thousand points the faces matter at every usable radius. Tori have no
# boundary, which is why they make the cleaner benchmark.
