# ABOUTME: Subcommand package for the qlrnn CLI
# ABOUTME: Each module registers one subcommand on the argparse parser

"""qlrnn subcommands.

Modules:
    train     - fit a model and write the best checkpoint
    evaluate  - score a checkpoint on a dataset split
    params    - per-tensor parameter table and model size
    gradflow  - gradient-norm decay table as CSV
    bench     - forward/backward throughput per architecture

Each module exposes a `register_*_command` function that cli.py calls once
to add its subparser; the handler is stored as the parser's ``handler``.
"""
