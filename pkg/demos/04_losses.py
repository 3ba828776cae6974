"""
Training losses and their gradients
===================================

The losses return values together with analytic gradients.  Here each one
is evaluated on a small random input and its gradient is compared with
central differences.
"""

import numpy as np

from hams import losses

rng = np.random.default_rng(0)


def numeric_grad(f, x, h=1e-5):
    g = np.zeros(x.size)
    flat = x.ravel()
    for i in range(x.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return g


pred = rng.normal(size=(6, 8, 3))
truth = rng.normal(size=(6, 8, 3))
conf = 1 + rng.exponential(size=(6, 8))
res = losses.confidence_regression_loss(pred, truth, conf)
num = numeric_grad(lambda p: losses.confidence_regression_loss(p, truth, conf).value, pred)
print("confidence regression %.4f  grad rel err %.1e"
      % (res.value, np.linalg.norm(res.gradients["pred"] - num) / np.linalg.norm(num)))

masks = rng.normal(size=(4, 6, 8))
classes = rng.normal(size=(4, 2))
gt = rng.random((2, 6, 8)) > 0.5
res = losses.segmentation_loss(masks, classes, gt)
num = numeric_grad(lambda m: losses.segmentation_loss(m, classes, gt).value, masks)
print("segmentation          %.4f  grad rel err %.1e"
      % (res.value, np.linalg.norm(res.gradients["mask_logits"] - num) / np.linalg.norm(num)))

# the head losses are added to the reconstruction loss with fixed weights
print("total of (0, 2, 3, 5):", losses.total_loss(0, 2, 3, 5))
