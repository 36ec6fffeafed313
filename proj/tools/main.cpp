#include <CLI11.hpp>

#include "xicl/xicl.hpp"

int main(int argc, char** argv) {
  CLI::App app{"cross-lingual in-context learning toolkit"};
  app.require_subcommand(1);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  return 0;
}
