import dataclasses

import numpy as np
import pytest

from irsnoma.beamforming import BeamformerSet, build_zf_beamformers
from irsnoma.channel import (draw_user_geometry, effective_channel, link_gains,
                             sinr, synthesize_channels)
from irsnoma.clustering import form_clusters
from irsnoma.config import SystemConfig


@pytest.fixture
def config():
    return SystemConfig()


def build_scenario(seed, config=None, zero_forcing=True, random_beams=False):
    """Draw one clustered, beamformed scenario at the initial reflection."""
    cfg = config or SystemConfig()
    rng = np.random.default_rng(seed)
    geometry = draw_user_geometry(cfg, rng)
    channels = synthesize_channels(cfg, geometry, rng)
    b0 = np.ones(cfg.num_irs_elements, dtype=complex)
    effective = effective_channel(channels.cascaded, b0)
    plan = form_clusters(effective, cfg.num_clusters, cfg.users_per_cluster,
                         cfg.correlation_threshold, rng)
    if random_beams:
        f = (rng.standard_normal((cfg.num_clusters, cfg.num_bs_antennas))
             + 1j * rng.standard_normal((cfg.num_clusters, cfg.num_bs_antennas)))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        beams = BeamformerSet(vectors=f, null_bases=tuple())
    else:
        beams = build_zf_beamformers(effective[plan.members[:, -1]])
    gains = link_gains(effective, plan.members, beams.vectors)
    return cfg, rng, channels, plan, beams, gains


def attainable_floor_scenario(seed, num_irs_elements=16, random_beams=True):
    """Scenario whose SINR floor is set below the starting SINRs.

    Used wherever the floor must be jointly attainable at the initial
    reflection (the reference parameters leave far users interference
    limited below the 3 dB floor there).
    """
    from irsnoma.power_allocation import allocate_power

    base = dataclasses.replace(SystemConfig(), num_irs_elements=num_irs_elements)
    cfg, rng, channels, plan, beams, gains = build_scenario(
        seed, config=base, random_beams=random_beams)
    stage1 = allocate_power(gains, cfg)
    gamma, _ = sinr(gains, stage1.beta, cfg)
    cfg = dataclasses.replace(cfg, min_sinr=0.5 * float(gamma.min()))
    return cfg, rng, channels, plan, beams, gains
