"""Independent brute-force verifiers for the rule engine.

taint_closure recomputes the set of tainted entities by plain forward
reachability over the trace, sharing no code with the taint rule module,
and diff_taint compares it with what the engine produced.  check_biba
verifies the low-water-mark integrity conditions (two levels: tainted
entities are low, everything else is high) against the audit an engine
replay produced.

Denied events contribute no edges and no structure on either side: the
engine applies nothing on a denial, so equivalence is judged over the
allowed events only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .guard import match_trust
from .model import Flag
from .world import InitConfig


@dataclass
class _Cell:
    """One live filesystem object, tracked by path independently of the engine."""

    serial: int
    path: str
    is_dir: bool = False
    is_fifo: bool = False
    is_device: bool = False
    exec_bits: bool = False

    @property
    def plain_file(self) -> bool:
        return not self.is_dir and not self.is_device


class _Structure:
    """Structural shadow of a replay: paths, exec bits, fifos, pids, sockets.

    Rebuilt from the boot config and the raw trace only; never from engine
    state.
    """

    def __init__(self, config: InitConfig):
        self.cells = {}          # path -> _Cell
        self.next_serial = 0
        self.live_pids = {1}
        self.exe_paths = {1: "-"}
        self.sockets = {}        # sock id -> (owner pid, trusted)
        self.fifo_msgs = {}      # cell serial -> [(writer pid, low at write)]
        self.finte = set()       # cell serials marked INTE at boot
        self.add_cell("/", is_dir=True)
        for path, kind, exec_bits in config.nodes:
            self._ensure_parents(path)
            self.add_cell(path, is_dir=(kind == "dir"), exec_bits=exec_bits)
        for flag, path in config.marks:
            if flag is Flag.INTE and path in self.cells:
                self.finte.add(self.cells[path].serial)

    def _ensure_parents(self, path: str):
        parts = path.strip("/").split("/")[:-1]
        current = ""
        for part in parts:
            current += "/" + part
            if current not in self.cells:
                self.add_cell(current, is_dir=True)

    def add_cell(self, path: str, is_dir=False, is_fifo=False, exec_bits=False) -> _Cell:
        cell = _Cell(self.next_serial, path, is_dir, is_fifo, exec_bits)
        self.next_serial += 1
        self.cells[path] = cell
        return cell

    def cell(self, path: str) -> _Cell | None:
        return self.cells.get(path)

    def remove(self, path: str):
        cell = self.cells.pop(path, None)
        if cell is not None:
            self.fifo_msgs.pop(cell.serial, None)

    def rename(self, src: str, dst: str):
        moved = [p for p in self.cells if p == src or p.startswith(src + "/")]
        self.remove(dst)
        for old in moved:
            cell = self.cells.pop(old)
            cell.path = dst + old[len(src):]
            self.cells[cell.path] = cell

    def fork(self, parent: int, child: int):
        self.live_pids.add(child)
        self.exe_paths[child] = self.exe_paths.get(parent, "-")

    def exit(self, pid: int):
        self.live_pids.discard(pid)

    def fifo_write(self, cell: _Cell, writer: int, low: bool):
        self.fifo_msgs.setdefault(cell.serial, []).append((writer, low))

    def fifo_read(self, cell: _Cell) -> list:
        return self.fifo_msgs.pop(cell.serial, [])

    def parse_endpoint(self, token: str) -> tuple:
        ip, port = token.rsplit(":", 1)
        return (ip, int(port))


def _denied_mask(records) -> set:
    return {i for i, r in enumerate(records) if r.denied}


def _redirect_map(records) -> dict:
    """Event index -> substitute path, for accesses the guard redirected."""
    out = {}
    for index, record in enumerate(records):
        if record.result.startswith("ALLOW_REDIR("):
            out[index] = record.result[len("ALLOW_REDIR("):-1]
    return out


def taint_closure(config: InitConfig, trust, events, denied=frozenset(),
                  redirects=None):
    """Tainted entities after each event, by direct forward reachability.

    Seeds are processes that open endpoints matching no trusted entry
    (plus explicit administrative taint marks); taint then follows process
    creation, IPC message delivery, writes that leave executables behind,
    and execution or loading of tainted files.  Events whose index is in
    ``denied`` contribute nothing; events in ``redirects`` act on the
    substitute path.  Both come from the audit, matching the engine's own
    access verdicts.  Returns one frozenset per event of ("proc", pid) /
    ("file", path) labels for live entities.
    """
    struct = _Structure(config)
    redirects = redirects or {}
    low_pids = set()
    low_cells = set()        # serials
    snapshots = []

    def low_file(path) -> bool:
        cell = struct.cell(path)
        return cell is not None and cell.serial in low_cells

    for index, ev in enumerate(events):
        if index in denied:
            snapshots.append(_closure_snapshot(struct, low_pids, low_cells))
            continue
        op, args = ev.op, ev.args
        if index in redirects and op in ("open_read", "open_write", "chmod", "fchmod"):
            args = (redirects[index],) + args[1:]
        if op in ("fork", "vfork", "clone"):
            child = int(args[0])
            struct.fork(ev.pid, child)
            if ev.pid in low_pids:
                low_pids.add(child)
        elif op == "exit":
            struct.exit(ev.pid)
        elif op == "pipe":
            if ev.pid in low_pids:
                low_pids.add(int(args[0]))
        elif op == "shmat":
            peer = int(args[0])
            if ev.pid in low_pids:
                low_pids.add(peer)
            if peer in low_pids:
                low_pids.add(ev.pid)
        elif op == "msgrcv":
            if int(args[0]) in low_pids:
                low_pids.add(ev.pid)
        elif op == "socket_open":
            sock_id = int(args[0])
            local = struct.parse_endpoint(args[1])
            remote = struct.parse_endpoint(args[2])
            trusted = match_trust(trust, struct.exe_paths.get(ev.pid, "-"),
                                  local, remote, args[3], ev.tick)
            struct.sockets[sock_id] = (ev.pid, trusted)
            if not trusted:
                low_pids.add(ev.pid)
        elif op in ("sock_send", "sock_recv") and len(args) == 3:
            peer = int(args[2])
            source, sink = (ev.pid, peer) if op == "sock_send" else (peer, ev.pid)
            if source in low_pids:
                low_pids.add(sink)
        elif op == "create":
            cell = struct.add_cell(args[0], exec_bits=(args[1] == "1"))
            if ev.pid in low_pids and cell.exec_bits:
                low_cells.add(cell.serial)
        elif op == "mkdir":
            struct.add_cell(args[0], is_dir=True)
        elif op == "mkfifo":
            struct.add_cell(args[0], is_fifo=True)
        elif op == "mknod":
            struct.add_cell(args[0], is_fifo=(args[1] == "fifo"))
        elif op == "open_write":
            cell = struct.cell(args[0])
            if cell is not None:
                if cell.is_fifo:
                    struct.fifo_write(cell, ev.pid, ev.pid in low_pids)
                if ev.pid in low_pids and cell.exec_bits and not cell.is_dir:
                    low_cells.add(cell.serial)
        elif op == "open_read":
            cell = struct.cell(args[0])
            if cell is not None and cell.is_fifo:
                if any(low for _, low in struct.fifo_read(cell)):
                    low_pids.add(ev.pid)
        elif op in ("chmod", "fchmod"):
            cell = struct.cell(args[0])
            if cell is not None and not cell.is_dir:
                became_set = args[1] == "1" and not cell.exec_bits
                cell.exec_bits = args[1] == "1"
                if became_set and ev.pid in low_pids:
                    low_cells.add(cell.serial)
        elif op == "execve":
            struct.exe_paths[ev.pid] = args[0]
            if low_file(args[0]):
                low_pids.add(ev.pid)
        elif op == "mmap_exec":
            if low_file(args[0]):
                low_pids.add(ev.pid)
        elif op in ("unlink", "rmdir"):
            struct.remove(args[0])
        elif op == "rename":
            struct.rename(args[0], args[1])
        elif op == "set_stbac_attr":
            target, flag_name, value = args
            if flag_name == "taint" and target.startswith("pid:"):
                pid = int(target[4:])
                low_pids.add(pid) if value == "1" else low_pids.discard(pid)
            elif flag_name == "taint":
                cell = struct.cell(target)
                if cell is not None:
                    if value == "1":
                        low_cells.add(cell.serial)
                    else:
                        low_cells.discard(cell.serial)
        snapshots.append(_closure_snapshot(struct, low_pids, low_cells))
    return snapshots


def _closure_snapshot(struct: _Structure, low_pids, low_cells) -> frozenset:
    out = {("proc", pid) for pid in low_pids if pid in struct.live_pids}
    for path, cell in struct.cells.items():
        if cell.serial in low_cells:
            out.add(("file", path))
    return frozenset(out)


@dataclass
class Divergence:
    index: int
    tick: int
    missing: frozenset    # oracle has them, engine does not
    extra: frozenset      # engine has them, oracle does not

    def describe(self) -> str:
        parts = [f"event {self.index} (tick {self.tick}):"]
        if self.missing:
            parts.append("engine missing " + _format_labels(self.missing))
        if self.extra:
            parts.append("engine extra " + _format_labels(self.extra))
        return " ".join(parts)


def _format_labels(labels) -> str:
    return ",".join(f"{kind}:{ident}" for kind, ident in sorted(labels))


def diff_taint(engine_sets, oracle_sets, events=None) -> list:
    """Per-event differences between engine and oracle tainted sets; empty
    means full agreement."""
    out = []
    for index in range(max(len(engine_sets), len(oracle_sets))):
        engine = engine_sets[index] if index < len(engine_sets) else frozenset()
        oracle = oracle_sets[index] if index < len(oracle_sets) else frozenset()
        if engine != oracle:
            tick = events[index].tick if events and index < len(events) else -1
            out.append(Divergence(index, tick, oracle - engine, engine - oracle))
    return out


def closure_from_replay(config: InitConfig, trust, events, records):
    """Convenience: the oracle closure with the audit's access verdicts."""
    return taint_closure(config, trust, events, _denied_mask(records),
                         _redirect_map(records))


# -- low-water-mark integrity conditions ---------------------------------------

@dataclass
class ConditionReport:
    name: str
    violations: list = field(default_factory=list)
    exceptions: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


@dataclass
class BibaReport:
    """Verdicts for the three two-level low-water-mark conditions.

    Reads/receives of low input must lower the consumer (condition on
    reads), writes must lower what low subjects produce - checked for
    executables, with non-executable writes listed as the documented
    exception and allowed writes to protected non-executables flagged as
    violations (condition on writes) - and processes created or exec'd
    from low sources must be low (condition on invocation).
    """

    cond_read: ConditionReport
    cond_write: ConditionReport
    cond_exec: ConditionReport

    def all_passed(self) -> bool:
        return (self.cond_read.passed and self.cond_write.passed
                and self.cond_exec.passed)

    def summary_lines(self) -> list:
        out = []
        for report in (self.cond_read, self.cond_write, self.cond_exec):
            status = "PASS" if report.passed else "FAIL"
            extra = ""
            if report.exceptions:
                extra = f" ({len(report.exceptions)} non-executable-write exceptions)"
            out.append(f"{report.name}: {status}{extra}")
            out.extend(f"  violation: {v}" for v in report.violations)
        return out


def check_biba(config: InitConfig, trust, events, records) -> BibaReport:
    """Check the three conditions against an engine audit of the same trace.

    The subject/object levels come from the engine's own flag timeline
    (boot marks plus per-event flag changes in the audit); the structure
    (paths, exec bits, fifos) is rebuilt independently from the trace.
    Low input means: an untrusted endpoint, an IPC message from a low
    process, or executing/loading a low file.  Plain data reads are not
    low input; that is exactly the concession the write condition records
    through its exception list.
    """
    if len(events) != len(records):
        raise ValueError(f"audit has {len(records)} records for {len(events)} events")
    struct = _Structure(config)
    low_pids = set()
    low_cells = set()
    finte_cells = set(struct.finte)

    cond_read = ConditionReport("low-input consumers become low")
    cond_write = ConditionReport("low writers lower what they produce")
    cond_exec = ConditionReport("processes from low sources are low")

    def is_low_file(path) -> bool:
        cell = struct.cell(path)
        return cell is not None and cell.serial in low_cells

    def is_finte(path) -> bool:
        cell = struct.cell(path)
        return cell is not None and cell.serial in finte_cells

    def parent_of(path):
        head = path.rsplit("/", 1)[0]
        return head or "/"

    for index, (ev, record) in enumerate(zip(events, records)):
        if record.denied:
            continue
        op, args = ev.op, ev.args
        if (record.result.startswith("ALLOW_REDIR(")
                and op in ("open_read", "open_write", "chmod", "fchmod", "truncate")):
            args = (record.result[len("ALLOW_REDIR("):-1],) + args[1:]
        pid_low_before = ev.pid in low_pids
        where = f"event {index} ({op}, tick {ev.tick})"

        # Expected consequences are checked after applying this event's
        # engine-reported flag changes, so gather the structural facts first.
        demands_read = []    # (pid, reason)
        demands_exec = []
        demands_write = []   # (path, reason)

        if op in ("fork", "vfork", "clone"):
            child = int(args[0])
            struct.fork(ev.pid, child)
            if pid_low_before:
                demands_read.append((child, f"{where}: child of low pid {ev.pid}"))
                demands_exec.append((child, f"{where}: child of low pid {ev.pid}"))
        elif op == "exit":
            struct.exit(ev.pid)
        elif op == "pipe":
            if pid_low_before:
                demands_read.append((int(args[0]), f"{where}: pipe from low pid {ev.pid}"))
        elif op == "shmat":
            peer = int(args[0])
            if pid_low_before:
                demands_read.append((peer, f"{where}: shared memory with low pid {ev.pid}"))
            if peer in low_pids:
                demands_read.append((ev.pid, f"{where}: shared memory with low pid {peer}"))
        elif op == "msgrcv":
            if int(args[0]) in low_pids:
                demands_read.append((ev.pid, f"{where}: message from low pid {args[0]}"))
        elif op == "socket_open":
            local = struct.parse_endpoint(args[1])
            remote = struct.parse_endpoint(args[2])
            trusted = match_trust(trust, struct.exe_paths.get(ev.pid, "-"),
                                  local, remote, args[3], ev.tick)
            if not trusted:
                demands_read.append((ev.pid, f"{where}: untrusted endpoint"))
        elif op in ("sock_send", "sock_recv") and len(args) == 3:
            peer = int(args[2])
            source, sink = (ev.pid, peer) if op == "sock_send" else (peer, ev.pid)
            if source in low_pids:
                demands_read.append((sink, f"{where}: local socket from low pid {source}"))
        elif op == "create":
            cell = struct.add_cell(args[0], exec_bits=(args[1] == "1"))
            if is_finte(parent_of(args[0])):
                finte_cells.add(cell.serial)   # directory inheritance
            if pid_low_before:
                if cell.exec_bits:
                    demands_write.append((args[0], f"{where}: low pid {ev.pid} created executable"))
                else:
                    cond_write.exceptions.append(f"{where}: non-executable {args[0]}")
                    if cell.serial in finte_cells:
                        cond_write.violations.append(
                            f"{where}: allowed creation in protected directory {parent_of(args[0])}")
        elif op == "mkdir":
            cell = struct.add_cell(args[0], is_dir=True)
            if is_finte(parent_of(args[0])):
                finte_cells.add(cell.serial)
            if pid_low_before:
                cond_write.exceptions.append(f"{where}: directory {args[0]}")
                if cell.serial in finte_cells:
                    cond_write.violations.append(
                        f"{where}: allowed creation in protected directory {parent_of(args[0])}")
        elif op in ("mkfifo", "mknod"):
            is_fifo = op == "mkfifo" or args[1] == "fifo"
            cell = struct.add_cell(args[0], is_fifo=is_fifo)
            if is_finte(parent_of(args[0])):
                finte_cells.add(cell.serial)
            if pid_low_before:
                cond_write.exceptions.append(f"{where}: special file {args[0]}")
                if cell.serial in finte_cells:
                    cond_write.violations.append(
                        f"{where}: allowed creation in protected directory {parent_of(args[0])}")
        elif op == "open_write":
            cell = struct.cell(args[0])
            if cell is not None and not cell.is_dir:
                if cell.is_fifo:
                    struct.fifo_write(cell, ev.pid, pid_low_before)
                if pid_low_before:
                    if cell.exec_bits:
                        demands_write.append((args[0], f"{where}: low pid {ev.pid} wrote executable"))
                    else:
                        cond_write.exceptions.append(f"{where}: non-executable {args[0]}")
                        if cell.serial in finte_cells:
                            cond_write.violations.append(
                                f"{where}: allowed write to protected {args[0]}")
        elif op == "truncate":
            cell = struct.cell(args[0])
            if cell is not None and pid_low_before and not cell.exec_bits:
                cond_write.exceptions.append(f"{where}: non-executable {args[0]}")
                if cell.serial in finte_cells:
                    cond_write.violations.append(
                        f"{where}: allowed truncate of protected {args[0]}")
        elif op in ("chmod", "fchmod"):
            cell = struct.cell(args[0])
            if cell is not None and not cell.is_dir:
                became_set = args[1] == "1" and not cell.exec_bits
                cell.exec_bits = args[1] == "1"
                if pid_low_before:
                    if became_set:
                        demands_write.append(
                            (args[0], f"{where}: low pid {ev.pid} made {args[0]} executable"))
                    elif cell.serial in finte_cells and not cell.exec_bits:
                        cond_write.violations.append(
                            f"{where}: allowed chmod of protected {args[0]}")
        elif op == "open_read":
            cell = struct.cell(args[0])
            if cell is not None and cell.is_fifo:
                senders = [w for w, low in struct.fifo_read(cell) if low]
                if senders:
                    demands_read.append(
                        (ev.pid, f"{where}: fifo message from low pid {senders[0]}"))
        elif op == "execve":
            struct.exe_paths[ev.pid] = args[0]
            if is_low_file(args[0]):
                demands_read.append((ev.pid, f"{where}: exec of low file {args[0]}"))
                demands_exec.append((ev.pid, f"{where}: exec of low file {args[0]}"))
            if pid_low_before:
                demands_exec.append((ev.pid, f"{where}: low pid {ev.pid} after exec"))
        elif op == "mmap_exec":
            if is_low_file(args[0]):
                demands_read.append((ev.pid, f"{where}: load of low file {args[0]}"))
        elif op in ("unlink", "rmdir"):
            struct.remove(args[0])
        elif op == "rename":
            struct.rename(args[0], args[1])

        # Fold in the engine's flag changes for this event, then check.
        for change in record.flag_changes:
            kind, ident = change.entity
            if change.flag is Flag.TAINT:
                if kind == "proc":
                    low_pids.add(ident) if change.on else low_pids.discard(ident)
                elif kind == "file":
                    cell = struct.cell(ident)
                    if cell is not None:
                        if change.on:
                            low_cells.add(cell.serial)
                        else:
                            low_cells.discard(cell.serial)
            elif change.flag is Flag.INTE and kind == "file":
                cell = struct.cell(ident)
                if cell is not None:
                    if change.on:
                        finte_cells.add(cell.serial)
                    else:
                        finte_cells.discard(cell.serial)

        for pid, reason in demands_read:
            if pid not in low_pids:
                cond_read.violations.append(reason + " did not lower the consumer")
        for pid, reason in demands_exec:
            if pid not in low_pids:
                cond_exec.violations.append(reason + " is not low")
        for path, reason in demands_write:
            if not is_low_file(path):
                cond_write.violations.append(reason + " but the file is not low")

    return BibaReport(cond_read, cond_write, cond_exec)
