"""Space-time SBP-SAT solver for the micro-macro kinetic transport model."""
