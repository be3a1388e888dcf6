#pragma once

namespace vhgnn::cli {

/// Full command-line surface: train / eval / predict / gradcheck / inspect.
/// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
/// 3 failed numerical check.
int run(int argc, char** argv);

} // namespace vhgnn::cli
