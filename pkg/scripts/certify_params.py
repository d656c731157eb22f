"""
Parameter certificate

Certifies one explicit parameter tuple against every ledger entry with
outward-rounded interval arithmetic and writes the certificate JSON.

Usage:
    certify-params --gamma1 1 --gamma2 1 --L 4 --b 2 --beta 0.51 --a 5 --toy
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from convexlab.exceptions import ConvexLabError
from convexlab.params import ParameterSet, certify, derive_constants

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)


def parse_args(argv: Optional[List[str]] = None):
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(description="Certify a parameter tuple against the ledger")
    parser.add_argument("--gamma1", type=float, required=True)
    parser.add_argument("--gamma2", type=float, required=True)
    parser.add_argument("--L", type=float, required=True)
    parser.add_argument("--b", type=int, required=True)
    parser.add_argument("--beta", type=float, required=True)
    parser.add_argument("--a", type=int, required=True)
    parser.add_argument("--K", type=float, default=2.0)
    parser.add_argument("--T", type=float, default=1.0)
    parser.add_argument("--toy", action="store_true", help="toy mode: red entries are reported, not fatal")
    parser.add_argument("--hard-fail", action="store_true", help="exit 6 when the certificate is red")
    parser.add_argument("--precision", type=int, default=53, help="working precision in bits")
    parser.add_argument("--output", type=str, default=None, help="certificate file (stdout when omitted)")
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    """Main function."""
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s", datefmt="%H:%M:%S")
    try:
        params = ParameterSet(
            gamma1=args.gamma1,
            gamma2=args.gamma2,
            L=args.L,
            b=args.b,
            beta=args.beta,
            a=args.a,
            K=args.K,
            T=args.T,
            mode="toy" if args.toy else "faithful",
        )
        constants = derive_constants(args.gamma1, gamma2=args.gamma2, precision=args.precision)
        report = certify(params, constants, args.precision)
    except (ConvexLabError, ValueError) as e:
        logger.error(f"Certification failed: {e}")
        return 2

    payload = json.dumps(report.to_certificate(), indent=2, default=float)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(payload)
        logger.info(f"Certificate written to {args.output}")
    else:
        print(payload)

    for entry in report.failing():
        logger.warning(f"{entry.tag}: {entry.statement} is {entry.verdict}")
    if not report.overall and (args.hard_fail or report.hard_fail):
        return 6
    return 0


if __name__ == "__main__":
    sys.exit(main())
