import sys

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from app.main import main  # noqa: E402

if __name__ == "__main__":
    # Run the command-line application
    sys.exit(main())
