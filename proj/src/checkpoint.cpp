#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "rgpb/io.hpp"
#include "rgpb/lm_core.hpp"

namespace rgpb {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian");

namespace {

constexpr std::array<char, 8> kMagic{'T', 'O', 'Y', 'L', 'M', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return value;
}

}  // namespace

void write_checkpoint(const ToyLM& model, std::ostream& out) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, model.vocab_size());
  put<std::uint64_t>(out, model.embed_dim());
  put<std::uint64_t>(out, model.hidden_dim());
  for (const Matrix* m : model.blocks()) {
    auto values = m->values();
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint write failed");
}

ToyLM read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw std::runtime_error("not a toy LM checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto vocab = get<std::uint64_t>(in);
  const auto d = get<std::uint64_t>(in);
  const auto dh = get<std::uint64_t>(in);
  ToyLM model(vocab, d, dh);
  for (Matrix* m : model.blocks()) {
    auto values = m->values();
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint truncated");
  }
  return model;
}

void save_checkpoint(const ToyLM& model, const std::filesystem::path& path) {
  std::ostringstream buffer(std::ios::binary);
  write_checkpoint(model, buffer);
  write_file_atomic(path, buffer.str());
}

ToyLM load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace rgpb
