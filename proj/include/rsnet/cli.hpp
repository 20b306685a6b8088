#pragma once

namespace rsn {

/// Entry point behind the `rsnet` binary; also callable from tests.
/// Exit codes: 0 success, 2 configuration/usage error, 3 training divergence,
/// 4 I/O failure.
int cli_main(int argc, const char* const* argv);

}  // namespace rsn
