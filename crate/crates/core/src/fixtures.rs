//! Small built-in corpus: libc-only C functions with assertion harnesses.
//! Used by the toy benchmark, the demo subcommands and the tests.

use crate::eval::BenchmarkSource;
use crate::pipeline::STANDARD_PRELUDE;
use crate::types::SourceFunction;

pub struct ToyFunction {
    pub id: &'static str,
    pub entry: &'static str,
    pub source: &'static str,
    pub harness: &'static str,
}

pub const TOY_FUNCTIONS: &[ToyFunction] = &[
    ToyFunction {
        id: "sum_to_n",
        entry: "sum_to_n",
        source: "int sum_to_n(int n)
{
    int total = 0;
    for (int i = 1; i <= n; i++)
        total += i;
    return total;
}
",
        harness: "#include <assert.h>
int main(void)
{
    assert(sum_to_n(1) == 1);
    assert(sum_to_n(6) == 21);
    assert(sum_to_n(30) == 465);
    assert(sum_to_n(0) == 0);
    return 0;
}
",
    },
    ToyFunction {
        id: "abs_or_zero",
        entry: "abs_or_zero",
        source: "int abs_or_zero(int n)
{
    if (n == 0) return 0;
    return n < 0 ? -n : n;
}
",
        harness: "#include <assert.h>
int main(void)
{
    assert(abs_or_zero(0) == 0);
    assert(abs_or_zero(-7) == 7);
    assert(abs_or_zero(12) == 12);
    return 0;
}
",
    },
    ToyFunction {
        id: "gcd",
        entry: "greatest_common_divisor",
        source: "int greatest_common_divisor(int a, int b)
{
    while (b != 0) {
        int t = a % b;
        a = b;
        b = t;
    }
    return a;
}
",
        harness: "#include <assert.h>
int main(void)
{
    assert(greatest_common_divisor(3, 7) == 1);
    assert(greatest_common_divisor(10, 15) == 5);
    assert(greatest_common_divisor(49, 14) == 7);
    assert(greatest_common_divisor(144, 60) == 12);
    return 0;
}
",
    },
    ToyFunction {
        id: "is_palindrome",
        entry: "is_palindrome",
        source: "int is_palindrome(const char *text)
{
    int i = 0;
    int j = (int)strlen(text) - 1;
    while (i < j) {
        if (text[i] != text[j])
            return 0;
        i++;
        j--;
    }
    return 1;
}
",
        harness: "#include <assert.h>
int main(void)
{
    assert(is_palindrome(\"\") == 1);
    assert(is_palindrome(\"aba\") == 1);
    assert(is_palindrome(\"aaaaa\") == 1);
    assert(is_palindrome(\"zbcd\") == 0);
    assert(is_palindrome(\"xywyx\") == 1);
    return 0;
}
",
    },
    ToyFunction {
        id: "count_vowels",
        entry: "vowels_count",
        source: "int vowels_count(const char *s)
{
    int count = 0;
    int n = (int)strlen(s);
    for (int i = 0; i < n; i++) {
        char c = (char)tolower((unsigned char)s[i]);
        if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u')
            count++;
    }
    if (n > 0 && (s[n - 1] == 'y' || s[n - 1] == 'Y'))
        count++;
    return count;
}
",
        harness: "#include <assert.h>
int main(void)
{
    assert(vowels_count(\"abcde\") == 2);
    assert(vowels_count(\"Alone\") == 3);
    assert(vowels_count(\"key\") == 2);
    assert(vowels_count(\"bye\") == 1);
    assert(vowels_count(\"ACEDY\") == 3);
    return 0;
}
",
    },
    ToyFunction {
        id: "fib",
        entry: "fib",
        source: "int fib(int n)
{
    int a = 0, b = 1;
    for (int i = 0; i < n; i++) {
        int t = a + b;
        a = b;
        b = t;
    }
    return a;
}
",
        harness: "#include <assert.h>
int main(void)
{
    assert(fib(0) == 0);
    assert(fib(1) == 1);
    assert(fib(10) == 55);
    assert(fib(12) == 144);
    return 0;
}
",
    },
    ToyFunction {
        id: "max_element",
        entry: "max_element",
        source: "int max_element(const int *v, int n)
{
    int best = v[0];
    for (int i = 1; i < n; i++)
        if (v[i] > best)
            best = v[i];
    return best;
}
",
        harness: "#include <assert.h>
int main(void)
{
    int a[] = {1, 2, 3};
    int b[] = {5, 3, -5, 2, -3, 3, 9, 0, 124, 1, -10};
    int c[] = {-4, -9, -2};
    assert(max_element(a, 3) == 3);
    assert(max_element(b, 11) == 124);
    assert(max_element(c, 3) == -2);
    return 0;
}
",
    },
    ToyFunction {
        id: "below_zero",
        entry: "below_zero",
        source: "int below_zero(const int *ops, int n)
{
    int balance = 0;
    for (int i = 0; i < n; i++) {
        balance += ops[i];
        if (balance < 0)
            return 1;
    }
    return 0;
}
",
        harness: "#include <assert.h>
int main(void)
{
    int a[] = {1, 2, -3, 1, 2, -3};
    int b[] = {1, 2, -4, 5, 6};
    int c[] = {1, -1, 2, -2, 5, -5, 4, -4};
    assert(below_zero(a, 0) == 0);
    assert(below_zero(a, 6) == 0);
    assert(below_zero(b, 5) == 1);
    assert(below_zero(c, 8) == 0);
    return 0;
}
",
    },
    ToyFunction {
        id: "is_prime",
        entry: "is_prime",
        source: "int is_prime(long n)
{
    if (n < 2)
        return 0;
    for (long i = 2; i * i <= n; i++)
        if (n % i == 0)
            return 0;
    return 1;
}
",
        harness: "#include <assert.h>
int main(void)
{
    assert(is_prime(6) == 0);
    assert(is_prime(101) == 1);
    assert(is_prime(13441) == 1);
    assert(is_prime(1) == 0);
    assert(is_prime(85) == 0);
    assert(is_prime(77) == 0);
    return 0;
}
",
    },
    ToyFunction {
        id: "triangle_area",
        entry: "triangle_area",
        source: "double triangle_area(double a, double b, double c)
{
    if (a + b <= c || a + c <= b || b + c <= a)
        return -1.0;
    double s = (a + b + c) / 2.0;
    double area = sqrt(s * (s - a) * (s - b) * (s - c));
    return round(area * 100.0) / 100.0;
}
",
        harness: "#include <assert.h>
#include <math.h>
int main(void)
{
    assert(fabs(triangle_area(3, 4, 5) - 6.00) < 1e-6);
    assert(fabs(triangle_area(1, 2, 10) + 1.0) < 1e-6);
    assert(fabs(triangle_area(4, 8, 5) - 8.18) < 1e-6);
    assert(fabs(triangle_area(2, 2, 2) - 1.73) < 1e-6);
    return 0;
}
",
    },
    ToyFunction {
        id: "count_upper",
        entry: "count_upper",
        source: "int count_upper(const char *s)
{
    int count = 0;
    for (int i = 0; s[i] != '\\0'; i++)
        if (isupper((unsigned char)s[i]))
            count++;
    return count;
}
",
        harness: "#include <assert.h>
int main(void)
{
    assert(count_upper(\"\") == 0);
    assert(count_upper(\"aBCdEf\") == 3);
    assert(count_upper(\"abcdefg\") == 0);
    assert(count_upper(\"DBBE\") == 4);
    return 0;
}
",
    },
    ToyFunction {
        id: "digit_sum",
        entry: "digit_sum",
        source: "int digit_sum(const char *s)
{
    int sum = 0;
    while (*s) {
        if (*s >= 'A' && *s <= 'Z')
            sum += *s;
        s++;
    }
    return sum;
}
",
        harness: "#include <assert.h>
int main(void)
{
    assert(digit_sum(\"\") == 0);
    assert(digit_sum(\"abAB\") == 131);
    assert(digit_sum(\"helloE\") == 69);
    assert(digit_sum(\"aAaaaXa\") == 153);
    return 0;
}
",
    },
];

/// Corpus form, with the standard prelude so the units compile as-is.
pub fn toy_corpus() -> Vec<SourceFunction> {
    TOY_FUNCTIONS
        .iter()
        .map(|t| SourceFunction {
            id: t.id.to_string(),
            prelude: STANDARD_PRELUDE.to_string(),
            body: t.source.to_string(),
            entry_name: t.entry.to_string(),
        })
        .collect()
}

pub fn toy_benchmark_sources() -> Vec<BenchmarkSource> {
    TOY_FUNCTIONS
        .iter()
        .map(|t| BenchmarkSource {
            sample_id: t.id.to_string(),
            reference_source: t.source.to_string(),
            test_harness: t.harness.to_string(),
            entry_name: t.entry.to_string(),
        })
        .collect()
}
