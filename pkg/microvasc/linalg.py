"""
The sparse solve contract shared by the flow and oxygen solvers: a solution
is only returned if its relative residual meets the tolerance.
"""
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import SolverError

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-10


def equilibrate(matrix, rhs):
    """
    Scales every row by the inverse of its largest absolute entry. The flow
    system mixes tissue rows of order K/mu and vessel rows of order R^4/mu,
    which differ by many orders of magnitude.
    """
    matrix = sp.csr_matrix(matrix)
    scale = row_scale(matrix)
    return (sp.diags(1.0 / scale) @ matrix).tocsr(), rhs / scale


def row_scale(matrix):
    """Largest absolute entry of every row, 1 for empty rows."""
    scale = np.asarray(abs(matrix).max(axis=1).todense()).ravel()
    scale[scale == 0.0] = 1.0
    return scale


def relative_residual(matrix, solution, rhs):
    norm = np.linalg.norm(rhs)
    residual = np.linalg.norm(matrix @ solution - rhs)
    if norm == 0.0:
        return residual
    return residual / norm


def _direct(matrix, rhs, tol, history):
    solution = spla.spsolve(matrix.tocsc(), rhs)
    return np.atleast_1d(solution)


def _incomplete_factor(matrix):
    """Returns the solve of an ILU factorization, or a Jacobi step."""
    try:
        return spla.spilu(matrix.tocsc(), drop_tol=1e-6, fill_factor=20).solve
    except RuntimeError:
        logger.warning("Incomplete factorization failed; falling back to "
            "Jacobi preconditioning.")
        diagonal = matrix.diagonal()
        diagonal[diagonal == 0.0] = 1.0
        return lambda x: np.ravel(x) / diagonal


def _preconditioner(matrix):
    return spla.LinearOperator(matrix.shape, _incomplete_factor(matrix))


def _krylov(method):
    def solve(matrix, rhs, tol, history):
        rhs_norm = np.linalg.norm(rhs) or 1.0

        def record(value):
            if np.ndim(value) == 0:
                history.append(float(value))
            else:
                history.append(float(np.linalg.norm(matrix @ value - rhs)
                    / rhs_norm))

        kwargs = {'rtol': 0.1 * tol, 'atol': 0.0, 'maxiter': 10 * matrix.shape[0],
            'M': _preconditioner(matrix), 'callback': record}
        if method is spla.gmres:
            kwargs['callback_type'] = 'pr_norm'
            kwargs['restart'] = 100
        solution, info = method(matrix, rhs, **kwargs)
        if info < 0:
            raise SolverError("Illegal input to the Krylov solver (info=%d)."
                % info, history)
        return solution
    return solve


SOLVERS = {
    'direct': _direct,
    'bicgstab': _krylov(spla.bicgstab),
    'gmres': _krylov(spla.gmres),
}


def _check_solution(scaled, solution, scaled_rhs, method, tol, history):
    if not np.all(np.isfinite(solution)):
        raise SolverError("The %s solver produced non-finite values; the "
            "system is probably singular." % method, history)
    residual = relative_residual(scaled, solution, scaled_rhs)
    history.append(float(residual))
    if residual > tol:
        raise SolverError(
            "Relative residual %.3e of the %s solver exceeds %.1e."
            % (residual, method, tol), history,
        )
    return residual


def solve_sparse(matrix, rhs, method='direct', tol=DEFAULT_TOLERANCE):
    """
    Solves ``matrix @ x = rhs`` after row equilibration.

    Returns ``(x, history)`` where ``history`` lists the relative residuals
    seen by iterative methods followed by the final relative residual of the
    equilibrated system. Raises ``SolverError`` when that residual exceeds
    ``tol``.
    """
    try:
        solver = SOLVERS[method]
    except KeyError:
        raise SolverError("Unknown linear solver %r." % method)
    matrix = sp.csr_matrix(matrix)
    rhs = np.asarray(rhs, dtype=float)
    scaled, scaled_rhs = equilibrate(matrix, rhs)
    history = []
    with np.errstate(all='ignore'):
        solution = solver(scaled, scaled_rhs, tol, history)
    residual = _check_solution(scaled, solution, scaled_rhs, method, tol,
        history)
    logger.debug("Solved %d unknowns with %s, relative residual %.2e.",
        matrix.shape[0], method, residual)
    return solution, history


class FactorizedSolver(object):
    """
    Solves a sequence of systems sharing one sparsity pattern and differing
    little from each other, such as the fixed point iterates of the oxygen
    problem.

    The first system is factorized (complete LU for ``'direct'``, incomplete
    LU otherwise). Later systems are solved by BiCGSTAB (GMRES for
    ``'gmres'``) preconditioned with that factorization and started from
    ``x0``. When such a solve misses ``tol`` the current system is
    factorized afresh and becomes the new reference. Every returned
    solution meets the residual contract of ``solve_sparse``.
    """

    def __init__(self, method='direct', tol=DEFAULT_TOLERANCE,
            max_iterations=50):
        if method not in SOLVERS:
            raise SolverError("Unknown linear solver %r." % method)
        self.method = method
        self.tol = tol
        self.max_iterations = max_iterations
        self.factorizations = 0
        self._factor = None
        self._scale = None

    def _factorize(self, scaled, scale):
        if self.method == 'direct':
            try:
                self._factor = spla.splu(scaled.tocsc()).solve
            except RuntimeError as error:
                raise SolverError("LU factorization failed: %s; the system "
                    "is probably singular." % error, [])
        else:
            self._factor = _incomplete_factor(scaled)
        self._scale = scale
        self.factorizations += 1

    def _krylov(self, scaled, scaled_rhs, scale, x0, history, maxiter):
        rescale = scale / self._scale
        factor = self._factor
        preconditioner = spla.LinearOperator(scaled.shape,
            lambda v: factor(np.ravel(v) * rescale))
        rhs_norm = np.linalg.norm(scaled_rhs) or 1.0

        def record(value):
            if np.ndim(value) == 0:
                history.append(float(value))
            else:
                history.append(float(np.linalg.norm(scaled @ value
                    - scaled_rhs) / rhs_norm))

        kwargs = {'x0': x0, 'rtol': 0.1 * self.tol, 'atol': 0.0,
            'maxiter': maxiter, 'M': preconditioner, 'callback': record}
        method = spla.bicgstab
        if self.method == 'gmres':
            method = spla.gmres
            kwargs['callback_type'] = 'pr_norm'
        solution, info = method(scaled, scaled_rhs, **kwargs)
        return solution if info >= 0 else None

    def _accepts(self, scaled, solution, scaled_rhs):
        return solution is not None and np.all(np.isfinite(solution)) \
            and relative_residual(scaled, solution, scaled_rhs) <= self.tol

    def solve(self, matrix, rhs, x0=None):
        """Returns ``(x, history)`` like ``solve_sparse``."""
        matrix = sp.csr_matrix(matrix)
        rhs = np.asarray(rhs, dtype=float)
        scale = row_scale(matrix)
        scaled = (sp.diags(1.0 / scale) @ matrix).tocsr()
        scaled_rhs = rhs / scale
        history = []
        with np.errstate(all='ignore'):
            solution = None
            if self._factor is not None and self._scale.shape == scale.shape:
                solution = self._krylov(scaled, scaled_rhs, scale, x0,
                    history, self.max_iterations)
            if not self._accepts(scaled, solution, scaled_rhs):
                if self._factor is not None:
                    logger.debug("Preconditioned solve missed %.1e after %d "
                        "steps; refactorizing.", self.tol, len(history))
                self._factorize(scaled, scale)
                if self.method == 'direct':
                    solution = self._factor(scaled_rhs)
                else:
                    solution = self._krylov(scaled, scaled_rhs, scale, x0,
                        history, 10 * matrix.shape[0])
                    if solution is None:
                        solution = np.full(matrix.shape[0], np.nan)
        _check_solution(scaled, solution, scaled_rhs, self.method, self.tol,
            history)
        return solution, history
