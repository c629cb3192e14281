"""Shared vocabulary of the policy model: flags, rule names, mutations, decisions.

Everything here is plain data.  Rule logic lives in taint/vital/guard; state
lives in world; sequencing lives in engine.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class StbacError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(StbacError):
    """Malformed or semantically invalid boot config / trust list / copy map."""


class TraceError(StbacError):
    """Malformed or inapplicable trace event.  Aborts the replay."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownEntity(StbacError):
    """A referenced path, pid, socket or resource does not exist."""


class ResourceExhausted(StbacError):
    """System-wide capacity of a resource is spent.

    Distinct from an availability denial: denials bind tainted processes
    only, exhaustion can hit anyone.
    """


class Flag(enum.Flag):
    """Label bits carried by processes, filesystem nodes and resources.

    TAINT marks entities suspected to be under intruder control.  CONF and
    INTE mark confidentiality/integrity protected objects.  LEAK marks
    executables (and processes derived from them) able to relay secrets,
    e.g. cp or dd.  AVAI only ever attaches to resource kinds, never to
    nodes or processes.
    """

    TAINT = enum.auto()
    CONF = enum.auto()
    INTE = enum.auto()
    AVAI = enum.auto()
    LEAK = enum.auto()


NO_FLAGS = Flag(0)

# Canonical short names, also the config / CLI / audit spelling.
FLAG_NAMES = {
    Flag.TAINT: "taint",
    Flag.CONF: "conf",
    Flag.INTE: "inte",
    Flag.AVAI: "avai",
    Flag.LEAK: "leak",
}
FLAGS_BY_NAME = {name: flag for flag, name in FLAG_NAMES.items()}

# Fixed rendering order for flag sets.
_FLAG_ORDER = (Flag.TAINT, Flag.CONF, Flag.INTE, Flag.AVAI, Flag.LEAK)


def flag_bits(flags: Flag) -> list[Flag]:
    """Decompose a flag set into single bits in canonical order."""
    return [f for f in _FLAG_ORDER if f in flags]


def format_flags(flags: Flag) -> str:
    """Render a flag set as 'conf|leak', or '-' when empty."""
    names = [FLAG_NAMES[f] for f in flag_bits(flags)]
    return "|".join(names) if names else "-"


def parse_flag(name: str) -> Flag:
    try:
        return FLAGS_BY_NAME[name]
    except KeyError:
        raise ConfigError(f"unknown flag {name!r}") from None


class ResourceKind(str, enum.Enum):
    """The limited resources guarded by the availability rule."""

    CPU_TICKS = "cpu_ticks"
    MEMORY_BYTES = "memory_bytes"
    DISK_BLOCKS = "disk_blocks"
    NET_BYTES = "net_bytes"
    KERNEL_OBJECTS = "kernel_objects"


def parse_resource(name: str) -> ResourceKind:
    try:
        return ResourceKind(name)
    except ValueError:
        raise ConfigError(f"unknown resource kind {name!r}") from None


class TaintRule(str, enum.Enum):
    SOCK_PROC = "TR_sock_proc"
    PROC_PROC = "TR_proc_proc"
    PROC_EXE = "TR_proc_exe"
    EXE_PROC = "TR_exe_proc"


class VitalRule(str, enum.Enum):
    DIR_DIR = "VR_dir_dir"
    PROC_PROC = "VR_proc_proc"
    PROC_FILE = "VR_proc_file"
    FILE_PROC = "VR_file_proc"


class ProtRule(str, enum.Enum):
    CONF = "PR_conf"
    INTE = "PR_inte"
    AVAI = "PR_avai"


# Entity references are (kind, id) pairs: ("proc", pid), ("file", node id),
# ("sock", socket id) or ("res", ResourceKind).  Lightweight on purpose;
# the world resolves them.
Ref = tuple


def proc_ref(pid: int) -> Ref:
    return ("proc", pid)


def file_ref(node_id: int) -> Ref:
    return ("file", node_id)


def sock_ref(sock_id: int) -> Ref:
    return ("sock", sock_id)


def res_ref(kind: ResourceKind) -> Ref:
    return ("res", kind)


@dataclass(frozen=True)
class TaintMutation:
    """Sets TAINT on target; cause is the entity the taint flowed from."""

    target: Ref
    rule: TaintRule
    cause: Ref


@dataclass(frozen=True)
class VitalMutation:
    """Adds/clears vital flags on target.

    flags_cleared is nonempty only for the exec reset of VR_file_proc.
    """

    target: Ref
    rule: VitalRule
    cause: Ref
    flags_added: Flag = NO_FLAGS
    flags_cleared: Flag = NO_FLAGS


Mutation = TaintMutation | VitalMutation


class Verdict(str, enum.Enum):
    ALLOW = "ALLOW"
    DENY = "DENY"
    ALLOW_REDIRECTED = "ALLOW_REDIR"


@dataclass
class Decision:
    """Outcome of consulting the protection rules for one access.

    A deny carries the rule that fired and never carries mutations; a
    redirected allow carries the substitute path.  The engine attaches the
    flag mutations implied by the access before applying them.
    """

    verdict: Verdict
    rule: ProtRule | None = None
    redirect_path: str | None = None
    mutations: list = field(default_factory=list)

    def __post_init__(self):
        if self.verdict is Verdict.DENY and self.mutations:
            raise ValueError("a denial must not carry mutations")
        if self.verdict is Verdict.ALLOW_REDIRECTED and not self.redirect_path:
            raise ValueError("a redirected allow needs a redirect path")

    @property
    def allowed(self) -> bool:
        return self.verdict is not Verdict.DENY

    def result_text(self) -> str:
        """Audit spelling: ALLOW, ALLOW_REDIR(path) or DENY(rule)."""
        if self.verdict is Verdict.ALLOW:
            return "ALLOW"
        if self.verdict is Verdict.ALLOW_REDIRECTED:
            return f"ALLOW_REDIR({self.redirect_path})"
        return f"DENY({self.rule.value})"


def allow(mutations=None) -> Decision:
    return Decision(Verdict.ALLOW, mutations=list(mutations or ()))


def deny(rule: ProtRule) -> Decision:
    return Decision(Verdict.DENY, rule=rule)


def redirect(path: str) -> Decision:
    return Decision(Verdict.ALLOW_REDIRECTED, redirect_path=path)
