"""The four vital-flag spread rules.

CONF/INTE descend from directories to new entries, CONF/LEAK descend from
parent to child process, and the leak mechanism spreads CONF selectively:
only a process carrying both CONF and LEAK writes secrecy into files.
Nothing here ever removes INTE from anything.
"""

from __future__ import annotations

from .model import Flag, NO_FLAGS, StbacError, VitalMutation, VitalRule, file_ref, proc_ref
from .world import Process, FsNode, World


def vr_dir_dir(world: World, parent_dir: FsNode, new_node: FsNode) -> VitalMutation | None:
    """A new entry inherits CONF and INTE from its directory, at creation only."""
    if parent_dir.kind != "dir":
        raise StbacError(f"{parent_dir.path} is not a directory")
    if new_node.parent != parent_dir.node_id:
        raise StbacError(f"{new_node.path} is not an entry of {parent_dir.path}")
    inherited = parent_dir.flags & (Flag.CONF | Flag.INTE)
    if inherited is NO_FLAGS:
        return None
    return VitalMutation(file_ref(new_node.node_id), VitalRule.DIR_DIR,
                         file_ref(parent_dir.node_id), flags_added=inherited)


def vr_proc_proc(world: World, parent: Process, child: Process) -> VitalMutation | None:
    """A new process inherits CONF and LEAK from its parent, at creation only."""
    inherited = parent.flags & (Flag.CONF | Flag.LEAK)
    if inherited is NO_FLAGS:
        return None
    return VitalMutation(proc_ref(child.pid), VitalRule.PROC_PROC,
                         proc_ref(parent.pid), flags_added=inherited)


def vr_proc_file(world: World, process: Process, node: FsNode,
                 action: str) -> VitalMutation | None:
    """Selective secrecy spread: a writer carrying both CONF and LEAK marks
    the written file CONF.

    Writing is never denied on this path; a writer holding only one of the
    two bits spreads nothing.
    """
    if action not in ("create", "write"):
        raise StbacError(f"bad vital action {action!r}")
    if node.kind != "file":
        raise StbacError(f"{node.path} is not a regular file")
    if Flag.CONF in process.flags and Flag.LEAK in process.flags:
        return VitalMutation(file_ref(node.node_id), VitalRule.PROC_FILE,
                             proc_ref(process.pid), flags_added=Flag.CONF)
    return None


def vr_file_proc(world: World, process: Process, node: FsNode,
                 action: str) -> VitalMutation | None:
    """Exec resets CONF/LEAK and inherits LEAK from the image; reading a
    CONF file marks the reader CONF.

    The exec reset applies uniformly to every process; taint is untouched
    either way.
    """
    if action not in ("execve", "read"):
        raise StbacError(f"bad vital action {action!r}")
    if node.kind != "file":
        raise StbacError(f"{node.path} is not a regular file")
    if action == "execve":
        if not node.exec_bits:
            raise StbacError(f"{node.path} is not executable")
        cleared = process.flags & (Flag.CONF | Flag.LEAK)
        added = node.flags & Flag.LEAK
        if cleared is NO_FLAGS and added is NO_FLAGS:
            return None
        return VitalMutation(proc_ref(process.pid), VitalRule.FILE_PROC,
                             file_ref(node.node_id),
                             flags_added=added, flags_cleared=cleared)
    if Flag.CONF in node.flags:
        return VitalMutation(proc_ref(process.pid), VitalRule.FILE_PROC,
                             file_ref(node.node_id), flags_added=Flag.CONF)
    return None
