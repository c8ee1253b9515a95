from aegon.broker.cli import main

main()
