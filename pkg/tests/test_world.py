import pytest

from stbac.model import ConfigError, Flag, ProtRule, StbacError, UnknownEntity, Verdict
from stbac.world import (
    INIT_PID,
    classify,
    get_flag,
    parse_init_config,
    serialize_config,
    set_flag,
    spawn_boot_world,
)


def boot(text):
    return spawn_boot_world(parse_init_config(text))


class TestBoot:
    def test_empty_config_gives_root_and_init(self):
        world = boot("")
        assert world.lookup("/") is not None
        assert set(world.processes) == {INIT_PID}
        assert world.processes[INIT_PID].flags is Flag(0)
        assert all(node.flags is Flag(0) for node in world.fs.values())

    def test_conf_mark_applied(self):
        world = boot("node /etc dir 0\nnode /etc/passwd file 0\nconf /etc/passwd\n")
        node = world.node_at("/etc/passwd")
        assert Flag.CONF in node.flags
        assert Flag.INTE not in node.flags

    def test_parents_created_implicitly(self):
        world = boot("node /a/b/c file 1\n")
        assert world.node_at("/a").kind == "dir"
        assert world.node_at("/a/b").kind == "dir"
        assert world.node_at("/a/b/c").exec_bits

    def test_duplicate_path_rejected(self):
        with pytest.raises(ConfigError, match="duplicate"):
            boot("node /x file 0\nnode /x file 0\n")

    def test_flag_on_missing_path_rejected(self):
        with pytest.raises(ConfigError, match="nonexistent"):
            boot("conf /nope\n")

    def test_hwm_percent_range_enforced(self):
        with pytest.raises(ConfigError, match=r"outside \(0,100\]"):
            parse_init_config("hwm cpu_ticks 10 101\n")
        with pytest.raises(ConfigError, match=r"outside \(0,100\]"):
            parse_init_config("hwm cpu_ticks 10 0\n")
        parse_init_config("hwm cpu_ticks 10 100\n")

    def test_hwm_and_cap_recorded(self):
        world = boot("hwm memory_bytes 512 75\ncap memory_bytes 4096\n")
        from stbac.model import ResourceKind
        assert world.ledger.hwm_st[ResourceKind.MEMORY_BYTES] == 512
        assert world.ledger.hwm_sys[ResourceKind.MEMORY_BYTES] == 75
        assert world.ledger.caps[ResourceKind.MEMORY_BYTES] == 4096
        assert Flag.AVAI in world.ledger.flags[ResourceKind.MEMORY_BYTES]

    def test_unknown_directive_rejected(self):
        with pytest.raises(ConfigError, match="unknown directive"):
            parse_init_config("frob /x\n")


class TestLookup:
    def test_root(self):
        world = boot("")
        assert world.lookup("/") == world.node_at("/").node_id

    def test_configured_path(self):
        world = boot("node /etc dir 0\nnode /etc/passwd file 0\n")
        assert world.lookup("/etc/passwd") is not None

    def test_missing_path_is_none(self):
        world = boot("")
        assert world.lookup("/no/such") is None


class TestFlagOps:
    def test_health_actor_sets_flag(self):
        world = boot("node /sbin dir 0\n")
        ref = ("file", world.lookup("/sbin"))
        decision = set_flag(world, ref, Flag.INTE, True, actor=INIT_PID)
        assert decision.verdict is Verdict.ALLOW
        assert Flag.INTE in world.node_at("/sbin").flags

    def test_tainted_actor_denied_set(self):
        world = boot("node /sbin dir 0\n")
        world.processes[INIT_PID].flags |= Flag.TAINT
        ref = ("file", world.lookup("/sbin"))
        decision = set_flag(world, ref, Flag.INTE, True, actor=INIT_PID)
        assert decision.verdict is Verdict.DENY
        assert decision.rule is ProtRule.INTE
        assert Flag.INTE not in world.node_at("/sbin").flags

    def test_set_is_idempotent(self):
        world = boot("node /f file 0\n")
        ref = ("file", world.lookup("/f"))
        set_flag(world, ref, Flag.CONF, True, actor=INIT_PID)
        set_flag(world, ref, Flag.CONF, True, actor=INIT_PID)
        assert world.node_at("/f").flags == Flag.CONF

    def test_clear_taint_explicitly_allowed(self):
        world = boot("node /f file 1\n")
        node = world.node_at("/f")
        node.flags |= Flag.TAINT
        set_flag(world, ("file", node.node_id), Flag.TAINT, False, actor=INIT_PID)
        assert Flag.TAINT not in node.flags

    def test_avai_only_on_resources(self):
        world = boot("node /f file 0\n")
        with pytest.raises(StbacError, match="avai"):
            set_flag(world, ("file", world.lookup("/f")), Flag.AVAI, True, INIT_PID)
        from stbac.model import ResourceKind
        decision = set_flag(world, ("res", ResourceKind.CPU_TICKS), Flag.AVAI,
                            True, INIT_PID)
        assert decision.verdict is Verdict.ALLOW
        with pytest.raises(StbacError, match="only applies"):
            set_flag(world, ("res", ResourceKind.CPU_TICKS), Flag.CONF, True, INIT_PID)

    def test_get_flag_health_actor(self):
        world = boot("node /f file 0\nconf /f\n")
        flags = get_flag(world, ("file", world.lookup("/f")), actor=INIT_PID)
        assert flags == Flag.CONF

    def test_get_flag_tainted_actor_denied(self):
        world = boot("node /f file 0\nconf /f\n")
        world.processes[INIT_PID].flags |= Flag.TAINT
        decision = get_flag(world, ("file", world.lookup("/f")), actor=INIT_PID)
        assert decision.rule is ProtRule.CONF

    def test_get_flag_unflagged_is_empty(self):
        world = boot("node /f file 0\n")
        assert get_flag(world, ("file", world.lookup("/f")), INIT_PID) is Flag(0)

    def test_unknown_entity(self):
        world = boot("")
        with pytest.raises(UnknownEntity):
            set_flag(world, ("file", 999), Flag.CONF, True, INIT_PID)


class TestClassification:
    @pytest.mark.parametrize("flags,tainted,vital,health", [
        (Flag(0), False, Flag(0), True),
        (Flag.TAINT, True, Flag(0), False),
        (Flag.CONF, False, Flag.CONF, False),
        (Flag.INTE, False, Flag.INTE, False),
        (Flag.TAINT | Flag.INTE, True, Flag.INTE, False),
        (Flag.LEAK, False, Flag(0), True),
        (Flag.TAINT | Flag.CONF | Flag.LEAK, True, Flag.CONF, False),
    ])
    def test_partition_reports_bits_faithfully(self, flags, tainted, vital, health):
        report = classify(flags)
        assert report.tainted is tainted
        assert report.vital == vital
        assert report.health is health

    def test_every_combination_is_classifiable(self):
        all_bits = [Flag.TAINT, Flag.CONF, Flag.INTE, Flag.LEAK]
        for mask in range(16):
            flags = Flag(0)
            for i, bit in enumerate(all_bits):
                if mask >> i & 1:
                    flags |= bit
            report = classify(flags)
            assert report.tainted == (Flag.TAINT in flags)
            assert report.health == (not report.tainted and not report.vital)


class TestSerialization:
    def test_round_trip(self):
        text = ("node /bin dir 0\nnode /bin/sh file 1\nnode /etc dir 0\n"
                "node /etc/passwd file 0\nconf /etc/passwd\ninte /bin\n"
                "leak /bin/sh\nhwm cpu_ticks 10 80\ncap cpu_ticks 100\n")
        world = boot(text)
        rendered = serialize_config(world)
        again = boot(rendered)
        assert Flag.CONF in again.node_at("/etc/passwd").flags
        assert Flag.INTE in again.node_at("/bin").flags
        assert Flag.LEAK in again.node_at("/bin/sh").flags
        assert again.node_at("/bin/sh").exec_bits
        from stbac.model import ResourceKind
        assert again.ledger.hwm_st[ResourceKind.CPU_TICKS] == 10
        assert again.ledger.caps[ResourceKind.CPU_TICKS] == 100


class TestIdentifiers:
    def test_pid_freshness_enforced(self):
        world = boot("")
        init = world.processes[INIT_PID]
        world.spawn(init, 5)
        with pytest.raises(StbacError, match="not fresh"):
            world.spawn(init, 5)
        with pytest.raises(StbacError, match="not fresh"):
            world.spawn(init, 3)

    def test_node_ids_never_reused(self):
        world = boot("node /a file 0\n")
        seen = {world.lookup("/a")}
        node = world.node_at("/a")
        world.remove_node(node)
        new = world.add_node("/a", "file")
        assert new.node_id not in seen
