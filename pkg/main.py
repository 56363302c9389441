"""smoothreg entry point: `python main.py <command>` runs the CLI without installing."""
from smoothreg.cli import cli

if __name__ == "__main__":
    cli()
