"""Log-density evaluators: built-in analytic targets and external processes.

Every true-model evaluation passes through ``eval`` and increments the
evaluation counter exactly once; surrogate evaluations never touch it.  A
model may split its log-density into an expensive part (what the surrogate
learns) and a cheap exact addend applied outside the surrogate, e.g. a
Gaussian log-prior when approximating only the log-likelihood.

External models speak a line protocol over stdin/stdout:

    server -> client   LAMCMC1 <dim>                      (handshake)
    client -> server   EVAL1 <id> <x1> ... <xd>
    server -> client   OK <id> <value>   or   ERR <id> <message>

All numbers are decimal text at full double precision (round-trip safe).
"""

import math
import selectors
import shlex
import subprocess
import threading
from collections import deque

import numpy as np

from .errors import ModelEvaluationError

__all__ = [
    "TargetModel",
    "Toy1DModel",
    "BananaModel",
    "GaussianModel",
    "CallableModel",
    "PosteriorModel",
    "ExternalModel",
    "builtin_model",
]

PROTOCOL_VERSION = "1"
HANDSHAKE_TAG = "LAMCMC" + PROTOCOL_VERSION
REQUEST_TAG = "EVAL" + PROTOCOL_VERSION


class TargetModel:
    """Base class: counts evaluations and validates inputs."""

    #: identifier used by the compiled exact-chain driver; None = Python call
    builtin_kind = None

    def __init__(self, dim):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self.n_evals = 0

    def eval(self, x):
        """Evaluate the expensive part of the log-density (counted)."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"point has {x.shape[0]} coordinates, expected {self.dim}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"non-finite evaluation point: {x}")
        self.n_evals += 1
        return float(self._eval(x))

    def exact_addend(self, x):
        """Cheap exact log-density term added outside the surrogate."""
        return 0.0

    def log_density(self, x):
        """Full unnormalized log-density (counted through ``eval``)."""
        return self.eval(x) + self.exact_addend(x)

    def _eval(self, x):
        raise NotImplementedError

    def close(self):
        pass


class Toy1DModel(TargetModel):
    """log pi(x) = -0.5 x^2 + sin(4 pi x) on the real line."""

    builtin_kind = "toy1d"

    def __init__(self):
        super().__init__(dim=1)

    def _eval(self, x):
        v = x[0]
        return -0.5 * v * v + math.sin(4.0 * math.pi * v)


class BananaModel(TargetModel):
    """log pi(x) = -x1^2 - (x2 - 5 x1^2)^2: long tails along x2."""

    builtin_kind = "banana"

    def __init__(self):
        super().__init__(dim=2)

    def _eval(self, x):
        x1, x2 = x
        r = x2 - 5.0 * x1 * x1
        return -x1 * x1 - r * r


class GaussianModel(TargetModel):
    """Multivariate Gaussian log-density up to a constant (oracle target)."""

    builtin_kind = "gaussian"

    def __init__(self, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        super().__init__(dim=mean.shape[0])
        if cov.shape != (self.dim, self.dim):
            raise ValueError(f"covariance shape {cov.shape} does not match dim {self.dim}")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be positive definite") from exc
        self.mean = mean
        self.cov = cov
        self.precision = np.linalg.inv(cov)
        self._chol = chol

    def _eval(self, x):
        r = x - self.mean
        return -0.5 * float(r @ self.precision @ r)


class CallableModel(TargetModel):
    """Wrap an arbitrary Python callable as a target (testing/plumbing)."""

    def __init__(self, fn, dim):
        super().__init__(dim=dim)
        self._fn = fn

    def _eval(self, x):
        return self._fn(x)


class PosteriorModel(TargetModel):
    """Expensive log-likelihood plus an exact Gaussian log-prior addend.

    The surrogate learns only the likelihood part; the prior enters the
    acceptance ratio exactly.
    """

    def __init__(self, likelihood, prior_mean, prior_cov):
        super().__init__(dim=likelihood.dim)
        prior = GaussianModel(prior_mean, prior_cov)
        if prior.dim != likelihood.dim:
            raise ValueError("prior and likelihood dimensions differ")
        self.likelihood = likelihood
        self.prior = prior

    def _eval(self, x):
        # Delegate without double counting: our own counter tracks the pair.
        return self.likelihood._eval(x)

    def exact_addend(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return self.prior._eval(x)

    def close(self):
        self.likelihood.close()


class _StderrDrain(threading.Thread):
    """Drains a pipe into a bounded deque so the child never blocks on it."""

    def __init__(self, pipe, maxlines=200):
        super().__init__(daemon=True)
        self.pipe = pipe
        self.lines = deque(maxlen=maxlines)

    def run(self):
        try:
            for raw in self.pipe:
                self.lines.append(raw.decode("utf-8", "replace").rstrip("\n"))
        except ValueError:
            pass

    def tail(self):
        return "\n".join(self.lines)


class ExternalModel(TargetModel):
    """Client for a model server subprocess speaking the line protocol.

    One subprocess per chain; requests are strictly serialized.  Timeouts,
    malformed responses, and process death surface as ModelEvaluationError
    with the offending point attached.
    """

    def __init__(self, command, dim, timeout=600.0):
        super().__init__(dim=dim)
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command)
        self.timeout = float(timeout)
        self._next_id = 0
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
        )
        self._stderr = _StderrDrain(self._proc.stderr)
        self._stderr.start()
        self._selector = selectors.DefaultSelector()
        self._selector.register(self._proc.stdout, selectors.EVENT_READ)
        self._buffer = b""
        try:
            self._handshake()
        except Exception:
            self.close()
            raise

    def _read_line(self, deadline_msg, point=None):
        import time

        deadline = time.monotonic() + self.timeout
        while b"\n" not in self._buffer:
            if self._proc.poll() is not None:
                raise ModelEvaluationError(
                    f"model process exited with code {self._proc.returncode} "
                    f"while waiting for {deadline_msg}",
                    point=point,
                    detail=self._stderr.tail(),
                )
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ModelEvaluationError(
                    f"timeout ({self.timeout:g}s) waiting for {deadline_msg}",
                    point=point,
                    detail=self._stderr.tail(),
                )
            events = self._selector.select(timeout=min(remaining, 0.25))
            if not events:
                continue
            chunk = self._proc.stdout.read1(65536)
            if not chunk:
                # EOF; loop re-checks the exit status.
                import time as _t

                _t.sleep(0.01)
                continue
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode("utf-8", "replace").strip()

    def _handshake(self):
        line = self._read_line("handshake")
        parts = line.split()
        if len(parts) != 2 or parts[0] != HANDSHAKE_TAG:
            raise ModelEvaluationError(
                f"bad handshake line from model server: {line!r}",
                detail=self._stderr.tail(),
            )
        server_dim = int(parts[1])
        if server_dim != self.dim:
            raise ModelEvaluationError(
                f"model server declared dim={server_dim}, expected {self.dim}"
            )

    def _eval(self, x):
        if self._proc.poll() is not None:
            raise ModelEvaluationError(
                f"model process is dead (exit code {self._proc.returncode})",
                point=x,
                detail=self._stderr.tail(),
            )
        self._next_id += 1
        req_id = self._next_id
        coords = " ".join(repr(float(v)) for v in x)
        try:
            self._proc.stdin.write(f"{REQUEST_TAG} {req_id} {coords}\n".encode())
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ModelEvaluationError(
                f"failed to send evaluation request: {exc}",
                point=x,
                detail=self._stderr.tail(),
            ) from exc
        line = self._read_line(f"response to request {req_id}", point=x)
        parts = line.split(maxsplit=2)
        if len(parts) >= 2 and parts[0] == "OK" and parts[1] == str(req_id):
            try:
                return float(parts[2])
            except (IndexError, ValueError):
                pass
        if parts and parts[0] == "ERR":
            raise ModelEvaluationError(
                f"model server reported an error: {line}", point=x
            )
        raise ModelEvaluationError(
            f"malformed model response: {line!r}", point=x, detail=self._stderr.tail()
        )

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        try:
            self._selector.close()
        except Exception:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def builtin_model(name, **params):
    """Construct a built-in target by config name."""
    name = name.lower()
    if name == "toy1d":
        return Toy1DModel()
    if name == "banana":
        return BananaModel()
    if name == "gaussian":
        return GaussianModel(params["mean"], params["cov"])
    raise ValueError(f"unknown builtin target: {name!r}")
