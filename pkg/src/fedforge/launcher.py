"""Spawn one OS process per node and supervise the run.

Every node runs the identical program (``python -m fedforge node ...``);
behaviour differs only through the ``--id`` argument.  The launcher is
also the safety net for the engine's deliberate lack of protocol
timeouts: a watchdog covers the whole run and kills every child when it
expires.  Child output is echoed line by line with a ``[node N]`` prefix
so interleaved logs stay attributable.
"""

from __future__ import annotations

import subprocess
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import FedforgeError

ALGORITHMS = ("centralized", "decentralized")
# The engine waits forever by design; the launcher is the safety net.
DEFAULT_WATCHDOG_SECONDS = 120.0


class LauncherError(FedforgeError):
    """A child process could not be spawned."""


class LaunchTimeoutError(LauncherError):
    """The watchdog expired; the message lists nodes still running."""


@dataclass(frozen=True)
class LaunchSpec:
    """Everything needed to start one federated run as local processes."""

    n_nodes: int
    algorithm: str
    dataset_path: Path
    srv_id: int = 0
    iterations: int = 1
    base_port: int = 6000
    watchdog_seconds: float = DEFAULT_WATCHDOG_SECONDS
    split_seed: int = 42
    out_dir: Path | None = None

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError(f"a run needs at least 2 nodes, got {self.n_nodes}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if not 0 <= self.srv_id < self.n_nodes:
            raise ValueError(f"server id {self.srv_id} outside 0..{self.n_nodes - 1}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.watchdog_seconds <= 0:
            raise ValueError(f"watchdog must be positive, got {self.watchdog_seconds}")


@dataclass(frozen=True)
class SpawnRecord:
    node_id: int
    argv: tuple[str, ...]
    pid: int


@dataclass
class LaunchResult:
    records: list[SpawnRecord]
    exit_codes: list[int]  # node-id order


def node_out_path(out_dir, node_id: int) -> Path:
    """Result-file path convention shared with the node subcommand."""
    return Path(out_dir) / f"node{node_id}.bin"


def _build_node_command(spec: LaunchSpec, node_id: int) -> list[str]:
    cmd = [
        sys.executable, "-m", "fedforge", "node",
        "--nodes", str(spec.n_nodes),
        "--id", str(node_id),
        "--srv-id", str(spec.srv_id),
        "--algo", spec.algorithm,
        "--iters", str(spec.iterations),
        "--base-port", str(spec.base_port),
        "--data", str(spec.dataset_path),
        "--seed", str(spec.split_seed),
    ]
    if spec.out_dir is not None:
        cmd += ["--out", str(node_out_path(spec.out_dir, node_id))]
    return cmd


def _pump_output(node_id: int, stream, echo) -> None:
    prefix = f"[node {node_id}] "
    for line in stream:
        echo(prefix + line.rstrip("\n"))
    stream.close()


def _kill_all(procs: list[subprocess.Popen]) -> None:
    for proc in procs:
        if proc.poll() is None:
            proc.terminate()
    grace = time.monotonic() + 2.0
    for proc in procs:
        if proc.poll() is None:
            try:
                proc.wait(timeout=max(0.05, grace - time.monotonic()))
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()


def launch(spec: LaunchSpec, echo=print) -> LaunchResult:
    """Spawn all nodes, wait for them, return spawn records and exit codes.

    One watchdog budget covers the whole run; on expiry every child is
    killed and the error names the nodes that were still alive.
    """
    procs: list[subprocess.Popen] = []
    records: list[SpawnRecord] = []
    readers: list[threading.Thread] = []
    try:
        for node_id in range(spec.n_nodes):
            cmd = _build_node_command(spec, node_id)
            try:
                proc = subprocess.Popen(
                    cmd, stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
                    text=True,
                )
            except OSError as exc:
                raise LauncherError(f"failed to spawn node {node_id}: {exc}") from exc
            procs.append(proc)
            records.append(SpawnRecord(node_id, tuple(cmd), proc.pid))
            reader = threading.Thread(
                target=_pump_output, args=(node_id, proc.stdout, echo), daemon=True
            )
            reader.start()
            readers.append(reader)

        deadline = time.monotonic() + spec.watchdog_seconds
        for proc in procs:
            remaining = deadline - time.monotonic()
            try:
                if remaining <= 0:
                    raise subprocess.TimeoutExpired(proc.args, spec.watchdog_seconds)
                proc.wait(timeout=remaining)
            except subprocess.TimeoutExpired:
                survivors = [i for i, p in enumerate(procs) if p.poll() is None]
                _kill_all(procs)
                raise LaunchTimeoutError(
                    f"watchdog ({spec.watchdog_seconds:g} s) expired; "
                    f"nodes still running: {survivors}"
                ) from None
        return LaunchResult(records, [p.returncode for p in procs])
    finally:
        _kill_all(procs)
        for reader in readers:
            reader.join(timeout=5.0)


def spawn_all(spec: LaunchSpec, echo=print) -> list[int]:
    """Run the full set of nodes; exit codes come back in node-id order."""
    return launch(spec, echo).exit_codes
