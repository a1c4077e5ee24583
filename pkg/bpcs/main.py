#!/usr/bin/env python
import bpcs.cli


def main(argv=None):
    return bpcs.cli.main(argv)
