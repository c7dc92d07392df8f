#include <doctest.h>

#include <filesystem>

#include "douap/config.hpp"
#include "douap/error.hpp"
#include "douap/io.hpp"

using namespace douap;

namespace {

std::string config_error(std::string_view text) {
  try {
    parse_config(text, "run.ini");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    CHECK(e.where() == "run.ini");
    return e.message();
  }
  FAIL("expected an error");
  return {};
}

bool has(const std::string& haystack, std::string_view needle) { return haystack.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("empty config gives the defaults") {
  const RunConfig c = parse_config("");
  CHECK(c.data.seed == 42);
  CHECK(c.data.n_train == 2048);
  CHECK(c.data.n_test == 96);
  CHECK(c.attack.eps_v == 12.0 / 255.0);
  CHECK(c.attack.alpha == 1.0);
  CHECK(c.attack.beta == 0.1);
  CHECK(c.attack.epochs == 2);
  CHECK(c.attack.batch == 64);
  CHECK(c.attack.aug.kind == AugKind::kBrightness);
  CHECK(c.attack.aug.brightness_lo == 0.0);
  CHECK(c.attack.aug.brightness_hi == 0.05);
  CHECK(c.train.epochs == 30);
  CHECK(c.sweep.values == std::vector<std::string>{"0", "0.1", "1", "10"});
  CHECK(c.sweep.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
}

TEST_CASE("a full config is read") {
  const RunConfig c = parse_config(R"(
# comment
[data]
seed = 7
n_train = 256   ; trailing comment
n_test = 48

[train]
lr = 0.1
epochs = 3

[attack]
eps_v = 8/255
beta = 0.5
aug = noise
noise_sigma = 0.02
text_step_scale = auto
record_wallclock = false

[eval]
probe_seed = 9

[sweep]
param = eps_v
values = 4/255, 8/255
seeds = 1,2
)");
  CHECK(c.data.seed == 7);
  CHECK(c.data.n_train == 256);
  CHECK(c.data.n_test == 48);
  CHECK(c.train.lr == 0.1);
  CHECK(c.train.epochs == 3);
  CHECK(c.attack.eps_v == 8.0 / 255.0);
  CHECK(c.attack.beta == 0.5);
  CHECK(c.attack.aug.kind == AugKind::kNoise);
  CHECK(c.attack.aug.noise_sigma == 0.02);
  CHECK_FALSE(c.attack.text_step_scale.has_value());
  CHECK_FALSE(c.attack.record_wallclock);
  CHECK(c.eval.probe_seed == 9);
  CHECK(c.sweep.param == SweepParam::kEpsV);
  CHECK(c.sweep.values == std::vector<std::string>{"4/255", "8/255"});
  CHECK(c.sweep.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(parse_config("[attack]\ntext_step_scale = 0.5\n").attack.text_step_scale == 0.5);
}

TEST_CASE("numbers and lists") {
  CHECK(parse_number("12/255") == 12.0 / 255.0);
  CHECK(parse_number(" 0.25 ") == 0.25);
  CHECK(parse_number("1e-3") == 0.001);
  CHECK_THROWS_AS(parse_number("1/0"), Error);
  CHECK_THROWS_AS(parse_number("abc"), Error);
  CHECK_THROWS_AS(parse_number("1.5x"), Error);
  CHECK(parse_count("12") == 12);
  CHECK_THROWS_AS(parse_count("-1"), Error);
  CHECK_THROWS_AS(parse_count("1.5"), Error);
  CHECK(split_list("a, b,,c ") == std::vector<std::string>{"a", "b", "c"});
  CHECK(split_list("").empty());
}

TEST_CASE("every problem is reported at once") {
  const std::string msg = config_error(R"(
[data]
n_test = 500
colour = red
[attack]
alpha = lots
beta = 0.2
beta = 0.3
[bogus]
x = 1
[train]
just some words
)");
  CHECK(has(msg, "data.colour: unknown key"));
  CHECK(has(msg, "attack.alpha"));
  CHECK(has(msg, "attack.beta: duplicate key"));
  CHECK(has(msg, "[bogus]: unknown section"));
  CHECK(has(msg, "line 12: expected key = value"));
  CHECK(has(msg, "n_test must be in [2, 96]"));
  CHECK(msg.find('\n') == std::string::npos);
}

TEST_CASE("invariants are checked after parsing") {
  CHECK(has(config_error("[attack]\nbeta = 1.5\n"), "[attack]"));
  CHECK(has(config_error("[attack]\naug = brightness\nbrightness_lo = 0.2\nbrightness_hi = 0.1\n"), "[attack]"));
  CHECK(has(config_error("[train]\nmomentum = 1\n"), "[train]"));
  CHECK(has(config_error("[sweep]\nparam = alpha\nvalues = 1, x\n"), "[sweep]"));
  CHECK(has(config_error("[sweep]\nseeds =\n"), "[sweep]"));
  CHECK(has(config_error("[sweep]\nparam = gamma\n"), "sweep.param"));
  CHECK(has(config_error("key = 1\n"), "outside any section"));
  CHECK(has(config_error("[attack\n"), "malformed section header"));
  CHECK(has(config_error("[attack]\nrecord_wallclock = maybe\n"), "attack.record_wallclock"));
}

TEST_CASE("sweep values apply to the base config") {
  const AttackConfig base;
  CHECK(with_sweep_value(base, SweepParam::kAlpha, "10").alpha == 10.0);
  CHECK(with_sweep_value(base, SweepParam::kBeta, "0.7").beta == 0.7);
  CHECK(with_sweep_value(base, SweepParam::kEpsV, "4/255").eps_v == 4.0 / 255.0);
  const AttackConfig crop = with_sweep_value(base, SweepParam::kAug, "crop");
  CHECK(crop.aug.kind == AugKind::kCrop);
  CHECK(crop.alpha == base.alpha);
  CHECK(with_sweep_value(base, SweepParam::kAug, "brightness").aug.brightness_hi == 0.05);
  CHECK_THROWS_AS(with_sweep_value(base, SweepParam::kBeta, "2"), Error);
  CHECK_THROWS_AS(with_sweep_value(base, SweepParam::kAug, "blur"), Error);
  CHECK(parse_sweep_param("eps_v") == SweepParam::kEpsV);
  CHECK(to_string(SweepParam::kAug) == "aug");
  CHECK_THROWS_AS(parse_sweep_param("gamma"), Error);
}

TEST_CASE("load_config reads files and names them in errors") {
  const auto path = std::filesystem::temp_directory_path() / "douap_config_test.ini";
  write_file(path, "[attack]\nalpha = 0.1\n");
  CHECK(load_config(path).attack.alpha == 0.1);
  write_file(path, "[attack]\nalpha = x\n");
  try {
    load_config(path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.where() == path.string());
  }
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config(path), Error);
}
