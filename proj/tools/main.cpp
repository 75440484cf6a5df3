#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) { return lesiongen::run_command(std::vector<std::string>(argv, argv + argc)); }
