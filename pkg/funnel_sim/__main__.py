from funnel_sim.main import main

main()
