// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "treecell/cli.hpp"

int main(int argc, char** argv)
{
    return treecell::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
