#include "cli_app.hpp"

int main(int argc, char** argv) { return lvc_cli_main(argc, argv); }
