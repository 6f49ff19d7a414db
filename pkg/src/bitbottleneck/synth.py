"""Synthetic rectified activations for demos and self-contained tests.

Values mimic post-ReLU feature maps with three populations: exact zeros, a
half-normal bulk, and one large outlier per sample sitting far above the
bulk. The construction works in code space so every population lands on
predictable bit planes: bulk codes ride a coarse lattice (multiples of 4,
with a few one-step slips), the outliers own the top octave, and in-bin
analog noise keeps the rounding floor of the initial quantizer honest.
The result is a code histogram whose bottom planes carry almost no signal
and whose top plane is paid for by a single element per sample, so both
ends of the plane stack are genuine candidates for exclusion while the
middle planes stay expensive.

Outliers are placed as a fixed count per sample rather than iid coin flips:
the cost of losing a top plane scales with how many outliers a sample
holds, so a sample that drew a surprise cluster would dominate the
worst-sample loss and make runs flaky across seeds.
"""

from __future__ import annotations

import numpy as np

from .tensor_store import write_container

DEFAULT_SHAPE = (16, 16, 16)
DEFAULT_LAYERS = 3
DEFAULT_SAMPLES = 64
DEFAULT_ZERO_FRAC = 0.6
DEFAULT_SIGMA = 0.05
DEFAULT_OUTLIER_FRAC = 1.0 / 4096.0
DEFAULT_OUTLIER_MULT = 12.0

BULK_LATTICE = 4  # bulk codes are multiples of this; planes below stay thin
BULK_TOP_CODE = 124  # bulk ceiling, keeps the top octave outlier-only
SLIP_PROB = 0.03  # chance a bulk code slips one step off the lattice
NOISE_HALF_WIDTH = 0.45  # in-bin analog noise, in code steps


def generate_layer(rng: np.random.Generator, num_samples: int, shape,
                   zero_frac: float = DEFAULT_ZERO_FRAC, sigma: float = DEFAULT_SIGMA,
                   outlier_frac: float = DEFAULT_OUTLIER_FRAC,
                   outlier_mult: float = DEFAULT_OUTLIER_MULT) -> np.ndarray:
    """One layer of samples, shape (num_samples, P, Q, K), float32, >= 0.

    sigma sets the bulk scale and sigma * outlier_mult the code range; every
    sample gets exactly round(outlier_frac * P*Q*K) outliers in the top
    octave, and one outlier is pinned at the exact range top so the no-clip
    quantizer sees a deterministic scale. outlier_frac = 0 gives a plain
    sparse lattice-bulk layer.
    """
    size = int(np.prod(shape))
    full = (num_samples, size)
    step = sigma * outlier_mult / 255.0
    m = np.rint(np.abs(rng.normal(0.0, 255.0 / (4.0 * outlier_mult), size=full)))
    codes = BULK_LATTICE * np.minimum(m, BULK_TOP_CODE // BULK_LATTICE).astype(np.int64)
    codes[rng.random(size=full) < zero_frac] = 0
    slip = (rng.random(size=full) < SLIP_PROB) & (codes > 0)
    codes[slip] += np.where(rng.random(size=int(slip.sum())) < 0.5, -1, 1)
    count = int(round(outlier_frac * size))
    pinned = None
    for i in range(num_samples):
        slots = rng.choice(size, size=count, replace=False)
        codes[i, slots] = rng.integers(160, 256, size=count)
        if i == 0 and count > 0:
            pinned = slots[0]
    noise = rng.uniform(-NOISE_HALF_WIDTH, NOISE_HALF_WIDTH, size=full)
    noise[codes == 0] = 0.0
    if pinned is not None:
        codes[0, pinned] = 255
        noise[0, pinned] = 0.0
    values = (codes + noise) * step
    return values.reshape(num_samples, *shape).astype(np.float32)


def generate_dataset(out_dir, num_layers: int = DEFAULT_LAYERS,
                     num_samples: int = DEFAULT_SAMPLES, shape=DEFAULT_SHAPE,
                     seed: int = 0, zero_frac: float = DEFAULT_ZERO_FRAC,
                     sigma: float = DEFAULT_SIGMA,
                     outlier_frac: float = DEFAULT_OUTLIER_FRAC,
                     outlier_mult: float = DEFAULT_OUTLIER_MULT):
    """Write a full synthetic container; layers differ in scale and sparsity.

    Returns the manifest path.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for layer_id in range(1, num_layers + 1):
        layers.append(generate_layer(
            rng, num_samples, shape,
            zero_frac=zero_frac,
            sigma=sigma * layer_id,
            outlier_frac=outlier_frac,
            outlier_mult=outlier_mult,
        ))
    return write_container(out_dir, layers, comments=(f"synthetic activations, seed {seed}",))
