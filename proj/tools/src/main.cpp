#include "commands.hpp"

int main(int argc, char** argv) { return protodistill::app::run_cli(argc, argv); }
