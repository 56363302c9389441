"""Result persistence for resumable grid runs."""
