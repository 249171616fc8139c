from pahs.cli import main

main()
