"""Text-interface bridge to the primary component.

Equation validity is decided by the primary parser, invoked through its
``parse`` CLI so the two components agree on the grammar by construction.
"""

from __future__ import annotations

import subprocess
import sys


class PrimaryUnavailableError(RuntimeError):
    pass


def canonicalize_lines(lines) -> list[str | None]:
    """Canonical text per input line, or None where the primary rejects it."""
    lines = [str(l).strip() for l in lines]
    payload = [l for l in lines if l]
    if not payload:
        return [None for _ in lines]
    try:
        proc = subprocess.run(
            [sys.executable, "-m", "lbpforge", "parse", "--file", "-"],
            input="\n".join(payload) + "\n",
            capture_output=True, text=True,
        )
    except OSError as exc:
        raise PrimaryUnavailableError(f"cannot run the lbpforge CLI: {exc}") from exc
    if proc.returncode not in (0, 2):
        raise PrimaryUnavailableError(
            f"lbpforge parse failed (exit {proc.returncode}): {proc.stderr.strip()}"
        )
    rows = proc.stdout.splitlines()
    if len(rows) != len(payload):
        raise PrimaryUnavailableError(
            f"lbpforge parse returned {len(rows)} rows for {len(payload)} lines"
        )
    results = iter(rows)
    out: list[str | None] = []
    for line in lines:
        if not line:
            out.append(None)
            continue
        row = next(results)
        out.append(row.split("\t", 1)[1] if row.startswith("ok\t") else None)
    return out
