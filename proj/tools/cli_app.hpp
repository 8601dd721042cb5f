#pragma once

// Exit codes: 0 success, 1 usage error, 2 runtime error.
int lvc_cli_main(int argc, const char* const* argv);
