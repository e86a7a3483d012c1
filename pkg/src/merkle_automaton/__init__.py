"""Hash-committed automata, knowledge stores and verifiers."""
