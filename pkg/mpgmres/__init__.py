"""Mixed-precision restarted GMRES solvers, preconditioners and benchmarks."""
