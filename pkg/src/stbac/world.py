"""Simulated kernel state: processes, filesystem tree, sockets, resource ledger.

The world is the single mutable value a replay folds over.  All label bits
live inline on the entity records; there is no side table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .model import (
    ConfigError,
    Decision,
    FLAG_NAMES,
    Flag,
    NO_FLAGS,
    ProtRule,
    Ref,
    ResourceKind,
    StbacError,
    UnknownEntity,
    allow,
    deny,
    parse_flag,
    parse_resource,
)

INIT_PID = 1

# Fallbacks when the boot config names no cap / marks for a resource.
DEFAULT_CAP = 1_000_000
DEFAULT_HWM_SYS_PERCENT = 90


@dataclass
class Process:
    pid: int
    parent: int
    uid: int = 0
    exe: int | None = None        # node id of the last exec'd file, None before any exec
    exe_path: str = "-"           # path snapshot taken at exec time, for audit
    flags: Flag = NO_FLAGS
    alive: bool = True
    usage: dict = field(default_factory=dict)   # ResourceKind -> allocated amount


@dataclass
class FsNode:
    node_id: int
    path: str
    kind: str                     # "file" | "dir" | "device"
    exec_bits: bool = False
    flags: Flag = NO_FLAGS
    parent: int | None = None     # None only for "/"


@dataclass
class Socket:
    sock_id: int
    owner: int
    local: tuple                  # (ip, port)
    remote: tuple
    proto: str                    # "tcp" | "udp"
    trusted: bool                 # decided once, at open time
    opened_at: int = 0


@dataclass
class ResourceLedger:
    """System-wide resource accounting plus the two high-water marks.

    hwm_st bounds what a single tainted process may hold; hwm_sys bounds
    the allocated percentage of the whole system once a tainted process
    asks for more.  Per-process holdings live on Process.usage; their sum
    must always equal allocated_sys.
    """

    caps: dict = field(default_factory=dict)          # kind -> system total
    allocated_sys: dict = field(default_factory=dict) # kind -> currently allocated
    hwm_st: dict = field(default_factory=dict)        # kind -> absolute amount
    hwm_sys: dict = field(default_factory=dict)       # kind -> percent in (0, 100]
    flags: dict = field(default_factory=dict)         # kind -> Flag (AVAI label only)

    def __post_init__(self):
        for kind in ResourceKind:
            self.caps.setdefault(kind, DEFAULT_CAP)
            self.allocated_sys.setdefault(kind, 0)
            self.hwm_st.setdefault(kind, self.caps[kind] // 2)
            self.hwm_sys.setdefault(kind, DEFAULT_HWM_SYS_PERCENT)
            self.flags.setdefault(kind, NO_FLAGS)

    def charge(self, process: Process, kind: ResourceKind, amount: int):
        process.usage[kind] = process.usage.get(kind, 0) + amount
        self.allocated_sys[kind] += amount

    def release_all(self, process: Process):
        for kind, amount in process.usage.items():
            self.allocated_sys[kind] -= amount
        process.usage = {}


@dataclass
class Classification:
    """Faithful report of an entity's partition bits.

    Taint and vital are not exclusive; health means neither is set (a LEAK
    bit alone still counts as health).
    """

    tainted: bool
    vital: Flag      # CONF/INTE bits present
    leak: bool

    @property
    def health(self) -> bool:
        return not self.tainted and self.vital is NO_FLAGS


def classify(flags: Flag) -> Classification:
    return Classification(
        tainted=Flag.TAINT in flags,
        vital=flags & (Flag.CONF | Flag.INTE),
        leak=Flag.LEAK in flags,
    )


@dataclass
class World:
    processes: dict = field(default_factory=dict)   # pid -> Process
    fs: dict = field(default_factory=dict)          # node id -> FsNode
    sockets: dict = field(default_factory=dict)     # sock id -> Socket
    ledger: ResourceLedger = field(default_factory=ResourceLedger)
    clock: int = 0
    audit: list = field(default_factory=list)       # append-only AuditRecords

    path_index: dict = field(default_factory=dict)  # live path -> node id
    fifos: set = field(default_factory=set)         # node ids created as fifos
    fifo_queues: dict = field(default_factory=dict) # node id -> [(writer pid, tainted at write)]
    next_node_id: int = 1
    max_pid_seen: int = INIT_PID
    max_sock_seen: int = 0

    # -- structure ---------------------------------------------------------

    def lookup(self, path: str) -> int | None:
        """Node id of the live node at an absolute path, or None."""
        return self.path_index.get(path)

    def node(self, node_id: int) -> FsNode:
        try:
            return self.fs[node_id]
        except KeyError:
            raise UnknownEntity(f"no such node id {node_id}") from None

    def node_at(self, path: str) -> FsNode:
        node_id = self.lookup(path)
        if node_id is None:
            raise UnknownEntity(f"no such path {path}")
        return self.fs[node_id]

    def process(self, pid: int) -> Process:
        try:
            proc = self.processes[pid]
        except KeyError:
            raise UnknownEntity(f"no such pid {pid}") from None
        return proc

    def live_process(self, pid: int) -> Process:
        proc = self.process(pid)
        if not proc.alive:
            raise UnknownEntity(f"pid {pid} has exited")
        return proc

    def socket(self, sock_id: int) -> Socket:
        try:
            return self.sockets[sock_id]
        except KeyError:
            raise UnknownEntity(f"no such socket {sock_id}") from None

    def add_node(self, path: str, kind: str, exec_bits: bool = False,
                 flags: Flag = NO_FLAGS) -> FsNode:
        """Insert a node; the parent directory must already exist."""
        if path in self.path_index:
            raise StbacError(f"path exists: {path}")
        parent_id = None
        if path != "/":
            parent_path = parent_of(path)
            parent_id = self.lookup(parent_path)
            if parent_id is None:
                raise UnknownEntity(f"missing parent directory {parent_path}")
            if self.fs[parent_id].kind != "dir":
                raise StbacError(f"parent is not a directory: {parent_path}")
        node = FsNode(self.next_node_id, path, kind, exec_bits, flags, parent_id)
        self.next_node_id += 1
        self.fs[node.node_id] = node
        self.path_index[path] = node.node_id
        return node

    def remove_node(self, node: FsNode):
        del self.path_index[node.path]
        del self.fs[node.node_id]
        self.fifos.discard(node.node_id)
        self.fifo_queues.pop(node.node_id, None)

    def children(self, node: FsNode) -> list:
        return [n for n in self.fs.values() if n.parent == node.node_id]

    def subtree(self, node: FsNode) -> list:
        """The node and all its descendants, parents before children."""
        out = [node]
        stack = [node]
        while stack:
            current = stack.pop()
            for child in self.children(current):
                out.append(child)
                stack.append(child)
        return out

    def repath(self, node: FsNode, new_path: str):
        """Move a node (and its subtree) to a new absolute path."""
        old_prefix = node.path
        for member in self.subtree(node):
            del self.path_index[member.path]
            member.path = new_path + member.path[len(old_prefix):]
            self.path_index[member.path] = member.node_id
        node.parent = self.lookup(parent_of(new_path))

    def spawn(self, parent: Process, child_pid: int) -> Process:
        if child_pid <= self.max_pid_seen:
            raise StbacError(
                f"pid {child_pid} is not fresh (last seen {self.max_pid_seen})")
        self.max_pid_seen = child_pid
        child = Process(child_pid, parent.pid, uid=parent.uid,
                        exe=parent.exe, exe_path=parent.exe_path)
        self.processes[child_pid] = child
        return child

    def open_socket(self, sock_id: int, owner: int, local, remote, proto,
                    trusted: bool) -> Socket:
        if sock_id <= self.max_sock_seen:
            raise StbacError(
                f"socket id {sock_id} is not fresh (last seen {self.max_sock_seen})")
        self.max_sock_seen = sock_id
        sock = Socket(sock_id, owner, local, remote, proto, trusted, self.clock)
        self.sockets[sock_id] = sock
        return sock

    # -- label access ------------------------------------------------------

    def resolve(self, ref: Ref):
        kind, ident = ref
        if kind == "proc":
            return self.process(ident)
        if kind == "file":
            return self.node(ident)
        if kind == "sock":
            return self.socket(ident)
        if kind == "res":
            return ident
        raise UnknownEntity(f"bad entity reference {ref!r}")

    def flags_of(self, ref: Ref) -> Flag:
        entity = self.resolve(ref)
        if isinstance(entity, ResourceKind):
            return self.ledger.flags[entity]
        if isinstance(entity, Socket):
            return NO_FLAGS
        return entity.flags


def parent_of(path: str) -> str:
    """Parent of an absolute path ('/' is its own parent)."""
    if path == "/":
        return "/"
    head = path.rsplit("/", 1)[0]
    return head or "/"


def check_path(path: str) -> str:
    if not path.startswith("/"):
        raise StbacError(f"path must be absolute: {path!r}")
    if "," in path:
        raise StbacError(f"comma not allowed in paths: {path!r}")
    if path != "/" and path.endswith("/"):
        raise StbacError(f"trailing slash not allowed: {path!r}")
    return path


# -- guarded flag operations ------------------------------------------------

def set_flag(world: World, ref: Ref, flag: Flag, on: bool, actor: int) -> Decision:
    """Set or clear one flag bit, guarded against tainted actors.

    AVAI is only valid on resource kinds; the other four bits live on
    processes and nodes.  Idempotent.
    """
    actor_proc = world.live_process(actor)
    entity = world.resolve(ref)   # raises UnknownEntity before the guard
    is_resource = isinstance(entity, ResourceKind)
    if (flag is Flag.AVAI) != is_resource:
        target = "resource kinds" if flag is Flag.AVAI else "processes and nodes"
        raise StbacError(f"flag {FLAG_NAMES[flag]} only applies to {target}")
    if Flag.TAINT in actor_proc.flags:
        return deny(ProtRule.INTE)
    if is_resource:
        current = world.ledger.flags[entity]
        world.ledger.flags[entity] = current | flag if on else current & ~flag
    elif on:
        entity.flags |= flag
    else:
        entity.flags &= ~flag
    return allow()


def get_flag(world: World, ref: Ref, actor: int) -> Decision | Flag:
    """Read an entity's flag set; tainted actors are refused."""
    actor_proc = world.live_process(actor)
    flags = world.flags_of(ref)
    if Flag.TAINT in actor_proc.flags:
        return deny(ProtRule.CONF)
    return flags


# -- boot config --------------------------------------------------------------

@dataclass
class InitConfig:
    """Parsed boot configuration.

    Directives apply in file order; a node line must precede any flag line
    for that path.  Missing parent directories are created implicitly.
    """

    nodes: list = field(default_factory=list)   # (path, kind, exec_bits)
    marks: list = field(default_factory=list)   # (Flag, path)
    hwms: dict = field(default_factory=dict)    # kind -> (per-taint limit, sys percent)
    caps: dict = field(default_factory=dict)    # kind -> system total


def parse_init_config(text: str) -> InitConfig:
    config = InitConfig()
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        directive, args = fields[0], fields[1:]
        try:
            if directive == "node":
                path, kind, exec_bit = args
                if kind not in ("file", "dir", "device"):
                    raise ConfigError(f"bad node kind {kind!r}")
                config.nodes.append((check_path(path), kind, _parse_bit(exec_bit)))
            elif directive in ("conf", "inte", "leak"):
                (path,) = args
                config.marks.append((parse_flag(directive), check_path(path)))
            elif directive == "hwm":
                kind_name, limit, percent = args
                kind = parse_resource(kind_name)
                limit = int(limit)
                percent = int(percent)
                if limit < 0:
                    raise ConfigError("per-taint limit must be >= 0")
                if not 0 < percent <= 100:
                    raise ConfigError(f"system percentage {percent} outside (0,100]")
                config.hwms[kind] = (limit, percent)
            elif directive == "cap":
                kind_name, total = args
                kind = parse_resource(kind_name)
                total = int(total)
                if total <= 0:
                    raise ConfigError("system total must be positive")
                config.caps[kind] = total
            else:
                raise ConfigError(f"unknown directive {directive!r}")
        except ValueError:
            raise ConfigError(f"line {line_no}: malformed directive: {line}") from None
        except StbacError as exc:
            raise ConfigError(f"line {line_no}: {exc}") from None
    return config


def _parse_bit(token: str) -> bool:
    if token not in ("0", "1"):
        raise ConfigError(f"expected 0 or 1, got {token!r}")
    return token == "1"


def spawn_boot_world(config: InitConfig) -> World:
    """Build the boot-time world: filesystem tree, labels, ledger, init process.

    Boot marks are explicit only; directory inheritance applies to nodes
    created later during replay, not to the configured tree.
    """
    world = World()
    world.add_node("/", "dir")
    declared = set()
    for path, kind, exec_bits in config.nodes:
        if path in declared:
            raise ConfigError(f"duplicate path in config: {path}")
        declared.add(path)
        _ensure_parents(world, path)
        if world.lookup(path) is not None:
            # Happens when a later directive names a directory that was
            # already created implicitly: declare directories first.
            raise ConfigError(f"duplicate path in config: {path}")
        try:
            world.add_node(path, kind, exec_bits)
        except StbacError as exc:
            raise ConfigError(str(exc)) from None
    for flag, path in config.marks:
        node_id = world.lookup(path)
        if node_id is None:
            raise ConfigError(f"flag {FLAG_NAMES[flag]} on nonexistent path {path}")
        world.fs[node_id].flags |= flag
    for kind, (limit, percent) in config.hwms.items():
        world.ledger.hwm_st[kind] = limit
        world.ledger.hwm_sys[kind] = percent
        world.ledger.flags[kind] |= Flag.AVAI
    for kind, total in config.caps.items():
        world.ledger.caps[kind] = total
        world.ledger.flags[kind] |= Flag.AVAI
        if kind not in config.hwms:
            world.ledger.hwm_st[kind] = total // 2
    world.processes[INIT_PID] = Process(INIT_PID, parent=0)
    return world


def _ensure_parents(world: World, path: str):
    parents = []
    current = parent_of(path)
    while world.lookup(current) is None:
        parents.append(current)
        current = parent_of(current)
    for parent_path in reversed(parents):
        world.add_node(parent_path, "dir")


def serialize_config(world: World, ledger_lines: bool = True) -> str:
    """Render the current tree and labels back into config directives.

    Used by the flag administration commands, which treat the config file
    itself as the state snapshot.  Comments are not preserved.
    """
    lines = []
    nodes = sorted((n for n in world.fs.values() if n.path != "/"),
                   key=lambda n: (n.path.count("/"), n.path))
    for node in nodes:
        lines.append(f"node {node.path} {node.kind} {int(node.exec_bits)}")
    for node in nodes:
        for flag in (Flag.CONF, Flag.INTE, Flag.LEAK):
            if flag in node.flags:
                lines.append(f"{FLAG_NAMES[flag]} {node.path}")
    if ledger_lines:
        for kind in ResourceKind:
            if Flag.AVAI in world.ledger.flags[kind]:
                lines.append(f"hwm {kind.value} {world.ledger.hwm_st[kind]}"
                             f" {world.ledger.hwm_sys[kind]}")
                lines.append(f"cap {kind.value} {world.ledger.caps[kind]}")
    return "\n".join(lines) + ("\n" if lines else "")
