import logging
import sys
from typing import Optional, Sequence

from dotenv import load_dotenv

from adcell import config
from adcell.cli import build_parser
from adcell.errors import AdCellError

logger = logging.getLogger(__name__)


def main(argv: Optional[Sequence[str]] = None) -> int:
    # Load environment variables
    load_dotenv()
    settings = config.reload_settings()

    # Configure logging
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except AdCellError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
