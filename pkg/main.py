import sys

from cli.app import main

if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\n👋 Run interrupted by user")
        sys.exit(130)
    except Exception as e:
        print(f"\n❌ System error: {e}")
        sys.exit(2)
