import pytest

from stbac.engine import Policy, parse_trace, replay
from stbac.guard import parse_pcopy_map, parse_trust_list
from stbac.world import parse_init_config, spawn_boot_world

import trace_gen


@pytest.fixture
def boot_world():
    """A small world: protected /bin, a secret, a leak-capable copier."""
    return spawn_boot_world(parse_init_config(trace_gen.BOOT_CONFIG))


def run_generated(intents, mode="full", track_taint=True):
    """Replay a generated intent list; returns (config, events, policy, result)."""
    trace_text, trust_text = trace_gen.build_trace(intents, mode)
    config = parse_init_config(trace_gen.BOOT_CONFIG)
    world = spawn_boot_world(config)
    events = parse_trace(trace_text)
    policy = Policy(parse_trust_list(trust_text),
                    parse_pcopy_map(trace_gen.PCOPY_TEXT))
    result = replay(world, events, policy, track_taint=track_taint)
    return config, events, policy, result
