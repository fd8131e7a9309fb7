from rwp_toolbox.cli import main

main()
