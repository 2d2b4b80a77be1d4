"""Random ensemble scenes for oracle comparisons."""
import numpy as np
from scipy.ndimage import gaussian_filter

from structunc.phantom import PhantomPackingError, PhantomSpec, generate_phantom


def smooth_scene(rng, shape=(16, 16, 16), n_members=None):
    """Members share a smooth blob field plus member-specific smooth perturbations."""
    m = int(n_members or rng.integers(2, 6))
    base = gaussian_filter(rng.standard_normal(shape), sigma=1.5)
    base /= base.std()
    members = []
    for _ in range(m):
        own = gaussian_filter(rng.standard_normal(shape), sigma=1.2)
        own /= own.std()
        members.append(1.0 / (1.0 + np.exp(-3.0 * (base + 0.5 * own - 1.0))))
    return np.stack(members)


def phantom_scene(rng, shape=(16, 16, 16)):
    spec = PhantomSpec(
        shape=shape,
        n_lesions=int(rng.integers(1, 4)),
        lesion_radius_range=(1.6, 2.6),
        member_count=int(rng.integers(2, 6)),
        border_jitter=float(rng.uniform(0, 0.8)),
        fp_injection_rate=float(rng.uniform(0, 1)),
        member_dropout_rate=float(rng.uniform(0, 1)),
        softness=float(rng.uniform(0.1, 0.6)),
        seed=int(rng.integers(2**31)),
    )
    try:
        return generate_phantom(spec).ensemble.members
    except PhantomPackingError:
        return smooth_scene(rng, shape)


def random_scene(rng, shape=(16, 16, 16)):
    """(members, alpha, member_alphas) alternating phantom and smooth-noise scenes."""
    members = phantom_scene(rng, shape) if rng.random() < 0.5 else smooth_scene(rng, shape)
    alpha = float(rng.uniform(0.3, 0.7))
    member_alphas = [float(a) for a in rng.uniform(0.2, 0.8, size=len(members))]
    return members, alpha, member_alphas
