#pragma once

#include <filesystem>
#include <string>
#include <utility>

#include "patchbench/defense.hpp"
#include "patchbench/png_io.hpp"
#include "patchbench/subprocess.hpp"

namespace patchbench {

/// File-exchange adapter for defenses that cannot be embedded. The command is
/// invoked as
///   command <image.png> <mask_out.png> <purified_out.png>
/// and must write a 1-bit mask plus a purified image at the given paths.
/// Localize and purify both run the full external pipeline; purify returns the
/// purified file for the requested image and ignores the caller's mask, so the
/// external tool remains the authority on its own localization.
class ExternalDefenseAdapter final : public Defense {
public:
  ExternalDefenseAdapter(std::string name, std::string command)
      : name_(std::move(name)), command_(std::move(command)) {}

  std::string name() const override { return name_; }

  BinaryMask localize(const ImageBuffer& x, Rng&) const override { return run(x).first; }

  ImageBuffer purify(const ImageBuffer& x, const BinaryMask& mask) const override {
    detail::shape_check(x, mask, "external purify");
    ImageBuffer out = run(x).second;
    out.id = x.id;
    return out;
  }

private:
  std::pair<BinaryMask, ImageBuffer> run(const ImageBuffer& x) const {
    namespace fs = std::filesystem;
    const std::string stem = "patchbench_def_" +
                             std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "_" + x.id;
    const fs::path in = fs::temp_directory_path() / (stem + "_in.png");
    const fs::path mask_out = fs::temp_directory_path() / (stem + "_mask.png");
    const fs::path pure_out = fs::temp_directory_path() / (stem + "_pure.png");
    write_png8(in.string(), x);
    auto cleanup = [&] {
      std::error_code ec;
      fs::remove(in, ec);
      fs::remove(mask_out, ec);
      fs::remove(pure_out, ec);
    };
    CommandResult res;
    try {
      res = run_command(command_ + " " + in.string() + " " + mask_out.string() + " " +
                        pure_out.string());
    } catch (...) {
      cleanup();
      throw;
    }
    if (res.exit_code != 0) {
      cleanup();
      throw IoError("external defense '" + name_ + "' exited with code " +
                    std::to_string(res.exit_code));
    }
    if (!fs::exists(mask_out) || !fs::exists(pure_out)) {
      cleanup();
      throw IoError("external defense '" + name_ + "' did not produce both output files");
    }
    try {
      BinaryMask mask = read_mask_png(mask_out.string());
      ImageBuffer purified = read_png(pure_out.string());
      cleanup();
      if (!mask.same_shape(x) || !purified.same_shape(x)) {
        throw IoError("external defense '" + name_ + "' returned mismatched shapes");
      }
      return {std::move(mask), std::move(purified)};
    } catch (...) {
      cleanup();
      throw;
    }
  }

  std::string name_;
  std::string command_;
};

}  // namespace patchbench
