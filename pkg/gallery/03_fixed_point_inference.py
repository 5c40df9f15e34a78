"""Real-valued versus fixed-point inference.

The fixed backend keeps every intermediate (accumulators, activations,
logits) on a 32-bit grid with 24 fractional bits.  For a recursively grown
network the logits agree with the floating-point pass to well under 1e-3,
and the class decisions agree almost everywhere.
"""
import numpy as np

from rbnn.model import forward, freeze_and_recycle, new_model

m = new_model(16, 8, seed=7)
for _ in range(3):
    m = freeze_and_recycle(m)
print(f"{m.subnet_count} subnets, layer shifts {m.layer_shifts}")

x = np.random.default_rng(0).uniform(-0.26, 1.75, size=(500, 784))
real = forward(m, x, backend="real")
fixed = forward(m, x, backend="fixed")
gap = np.abs(real.logits - fixed.logits)
print(f"max logit gap {gap.max():.2e}, mean {gap.mean():.2e}")
agree = np.mean(real.logits.argmax(1) == fixed.logits.argmax(1))
print(f"argmax agreement {agree:.3f}")

# frozen and plastic contributions add up to the total
np.testing.assert_allclose(real.frozen_logits + real.plastic_logits, real.logits, atol=1e-12)
print("frozen + plastic logits == total logits")
